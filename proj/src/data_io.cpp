#include "stfmm/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "stfmm/image_io.hpp"
#include "stfmm/rng.hpp"

namespace stfmm {

namespace fs = std::filesystem;

DatasetLayout parse_layout(const std::string& name) {
  if (name == "generic") return DatasetLayout::generic;
  if (name == "ilids") return DatasetLayout::ilids;
  if (name == "prid") return DatasetLayout::prid;
  fail(ErrorKind::usage, "unknown dataset layout '" + name + "'");
}

std::string layout_name(DatasetLayout layout) {
  switch (layout) {
    case DatasetLayout::generic: return "generic";
    case DatasetLayout::ilids: return "ilids";
    case DatasetLayout::prid: return "prid";
  }
  return "generic";
}

const DatasetIndex::Person* DatasetIndex::find(const std::string& id) const {
  for (const Person& p : persons)
    if (p.id == id) return &p;
  return nullptr;
}

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out.push_back(e.path());
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });
  return out;
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> out;
  require(fs::is_directory(dir),
          "dataset: missing directory " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root, DatasetLayout layout) {
  require(fs::is_directory(root), "dataset: missing root " + root.string());

  fs::path cam_dir[2];
  switch (layout) {
    case DatasetLayout::generic:
      cam_dir[0] = root / "cam1";
      cam_dir[1] = root / "cam2";
      break;
    case DatasetLayout::ilids:
      cam_dir[0] = root / "i-LIDS-VID" / "sequences" / "cam1";
      cam_dir[1] = root / "i-LIDS-VID" / "sequences" / "cam2";
      break;
    case DatasetLayout::prid:
      cam_dir[0] = root / "multi_shot" / "cam_a";
      cam_dir[1] = root / "multi_shot" / "cam_b";
      break;
  }

  std::vector<std::string> ids = sorted_subdirs(cam_dir[0]);
  const std::vector<std::string> ids2 = sorted_subdirs(cam_dir[1]);
  const std::set<std::string> cam2_set(ids2.begin(), ids2.end());

  DatasetIndex index;
  index.root = root.string();
  for (const std::string& id : ids) {
    if (!cam2_set.count(id)) {
      std::cerr << "warning: identity '" << id
                << "' present under camera 1 only, excluded\n";
      continue;
    }
    DatasetIndex::Person p;
    p.id = id;
    p.cameras[0] = sorted_pngs(cam_dir[0] / id);
    p.cameras[1] = sorted_pngs(cam_dir[1] / id);
    if (p.cameras[0].empty() || p.cameras[1].empty()) {
      std::cerr << "warning: identity '" << id
                << "' has an empty camera directory, excluded\n";
      continue;
    }
    index.persons.push_back(std::move(p));
    if (layout == DatasetLayout::prid && index.persons.size() == 200)
      break;  // first 200 both-camera identities
  }
  require(!index.persons.empty(),
          "dataset: no identities with both cameras under " + root.string());
  return index;
}

RawSequence load_raw_sequence(const DatasetIndex::Person& person, int camera) {
  require(camera == 1 || camera == 2, "dataset: camera must be 1 or 2");
  RawSequence seq;
  seq.person_id = person.id;
  seq.camera_id = camera;
  for (const fs::path& p : person.cameras[static_cast<std::size_t>(camera - 1)])
    seq.frames.push_back(load_image_rgb(p));
  require(!seq.frames.empty(), "dataset: no frames for " + person.id);
  return seq;
}

std::vector<SplitFile> make_splits(const DatasetIndex& index, int count,
                                   std::uint64_t seed) {
  require(index.persons.size() >= 2, "split: need at least two identities");
  require(count >= 1, "split: count must be >= 1");

  std::vector<std::string> ids;
  for (const auto& p : index.persons) ids.push_back(p.id);

  Pcg32 rng(seed);
  std::vector<SplitFile> splits;
  for (int s = 0; s < count; ++s) {
    std::vector<std::string> order = ids;
    shuffle(order, rng);
    const std::size_t train_n = (order.size() + 1) / 2;
    SplitFile sf;
    sf.seed = seed;
    sf.train_ids.assign(order.begin(), order.begin() + static_cast<long>(train_n));
    sf.test_ids.assign(order.begin() + static_cast<long>(train_n), order.end());
    std::sort(sf.train_ids.begin(), sf.train_ids.end());
    std::sort(sf.test_ids.begin(), sf.test_ids.end());
    splits.push_back(std::move(sf));
  }
  return splits;
}

void save_split(const SplitFile& split, const fs::path& path) {
  std::ofstream os(path);
  require(os.good(), "split: cannot write " + path.string());
  os << "seed = " << split.seed << "\n";
  os << "TRAIN\n";
  for (const auto& id : split.train_ids) os << id << "\n";
  os << "TEST\n";
  for (const auto& id : split.test_ids) os << id << "\n";
  require(os.good(), "split: write failed for " + path.string());
}

SplitFile load_split(const fs::path& path) {
  std::ifstream is(path);
  require(is.good(), "split: cannot read " + path.string());
  SplitFile sf;
  std::string line;
  int section = 0;  // 0 header, 1 train, 2 test
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line == "TRAIN") {
      section = 1;
      continue;
    }
    if (line == "TEST") {
      section = 2;
      continue;
    }
    if (section == 0) {
      const auto eq = line.find('=');
      require(eq != std::string::npos, "split: malformed header line: " + line);
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      const auto trim = [](std::string& s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
      };
      trim(key);
      trim(value);
      if (key == "seed") sf.seed = std::stoull(value);
      continue;
    }
    (section == 1 ? sf.train_ids : sf.test_ids).push_back(line);
  }
  require(!sf.train_ids.empty(), "split: no TRAIN identities in " + path.string());
  const std::set<std::string> train(sf.train_ids.begin(), sf.train_ids.end());
  for (const auto& id : sf.test_ids)
    require(!train.count(id), "split: identity '" + id + "' in both sides");
  return sf;
}

void validate_split(const SplitFile& split, const DatasetIndex& index) {
  std::set<std::string> eligible;
  for (const auto& p : index.persons) eligible.insert(p.id);
  std::set<std::string> seen;
  for (const auto& id : split.train_ids) {
    require(eligible.count(id), "split: unknown identity '" + id + "'");
    require(seen.insert(id).second, "split: duplicate identity '" + id + "'");
  }
  for (const auto& id : split.test_ids) {
    require(eligible.count(id), "split: unknown identity '" + id + "'");
    require(seen.insert(id).second, "split: duplicate identity '" + id + "'");
  }
  require(seen.size() == eligible.size(),
          "split: does not cover the eligible identity set");
  const auto diff = static_cast<long>(split.train_ids.size()) -
                    static_cast<long>(split.test_ids.size());
  require(diff >= -1 && diff <= 1, "split: sides differ by more than one");
}

namespace {

std::array<std::uint8_t, 3> hsv_to_rgb(double h_deg, double s, double v) {
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {static_cast<std::uint8_t>(std::lround((r + m) * 255.0)),
          static_cast<std::uint8_t>(std::lround((g + m) * 255.0)),
          static_cast<std::uint8_t>(std::lround((b + m) * 255.0))};
}

}  // namespace

void synth_generate(const fs::path& root, int identities,
                    int frames_per_camera, int height, int width,
                    std::uint64_t seed) {
  require(identities >= 2, "synth: need at least two identities");
  require(frames_per_camera >= 1, "synth: need at least one frame");
  require(height >= 16 && width >= 8, "synth: frame size too small");

  for (int cam = 1; cam <= 2; ++cam)
    fs::create_directories(root / ("cam" + std::to_string(cam)));

  for (int id = 0; id < identities; ++id) {
    // Identity appearance: distinct hue, stripe phase, and an
    // identity-specific vertical oscillation.
    const auto color = hsv_to_rgb(360.0 * id / identities, 0.85, 0.9);
    const int rect_w = std::max(4, width / 2);
    const int rect_h = std::max(6, height / 3);
    const int x0 = (width - rect_w) / 2;
    const double amp = 2.0 + static_cast<double>(id % 3);
    const double freq = (1.0 + static_cast<double>(id % 4)) /
                        static_cast<double>(frames_per_camera) * 2.0;
    const double phase = 0.7 * id + 0.01 * static_cast<double>(seed % 97);
    const int stripe_phase = id % 3;

    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "id%03d", id);
    for (int cam = 1; cam <= 2; ++cam) {
      const fs::path dir = root / ("cam" + std::to_string(cam)) / idbuf;
      fs::create_directories(dir);
      const int bg_base = cam == 1 ? 40 : 110;
      const double person_gain = cam == 1 ? 1.0 : 0.85;

      for (int t = 0; t < frames_per_camera; ++t) {
        ImageU8 img(height, width);
        // camera-specific background gradient with deterministic speckle
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x) {
            const std::uint64_t key =
                seed ^ (static_cast<std::uint64_t>(cam) << 48) ^
                (static_cast<std::uint64_t>(y) << 24) ^
                static_cast<std::uint64_t>(x);
            const int speckle =
                static_cast<int>(fnv1a64(&key, sizeof(key)) % 17) - 8;
            const int g = std::clamp(
                bg_base + (50 * y) / height + speckle, 0, 255);
            img.at(y, x, 0) = static_cast<std::uint8_t>(g);
            img.at(y, x, 1) = static_cast<std::uint8_t>(g);
            img.at(y, x, 2) = static_cast<std::uint8_t>(g);
          }

        const int y_mid = (height - rect_h) / 2;
        const int y_off = static_cast<int>(std::lround(
            amp * std::sin(2.0 * 3.14159265358979323846 * freq * t + phase)));
        const int y0 = std::clamp(y_mid + y_off, 0, height - rect_h);
        for (int y = y0; y < y0 + rect_h; ++y)
          for (int x = x0; x < x0 + rect_w; ++x) {
            // blocks ride along with the rectangle so frames carry motion
            // with gradients on both axes (plain stripes would leave the
            // flow system degenerate along one direction)
            const bool dark =
                (((y - y0) / 3) + ((x - x0) / 3) + stripe_phase) % 2 == 0;
            const double f = person_gain * (dark ? 0.55 : 1.0);
            for (int c = 0; c < 3; ++c)
              img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(
                  static_cast<int>(std::lround(color[static_cast<std::size_t>(c)] * f)),
                  0, 255));
          }

        char fbuf[24];
        std::snprintf(fbuf, sizeof(fbuf), "f%04d.png", t);
        save_image_rgb(dir / fbuf, img);
      }
    }
  }
}

// ---- array container ----

namespace {

constexpr const char* kContainerMagic = "STFMM-ARRAYS 1";

void append_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void ArrayFile::set_meta(const std::string& key, const std::string& value) {
  for (auto& kv : meta)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  meta.emplace_back(key, value);
}

const std::string* ArrayFile::find_meta(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

std::string ArrayFile::meta_or_fail(const std::string& key) const {
  const std::string* v = find_meta(key);
  require(v != nullptr, "container: missing meta key '" + key + "'");
  return *v;
}

const Tensor* ArrayFile::find_array(const std::string& name) const {
  for (const auto& na : arrays)
    if (na.first == name) return &na.second;
  return nullptr;
}

void ArrayFile::save(const fs::path& path) const {
  std::string payload;
  std::size_t total = 0;
  for (const auto& na : arrays) total += na.second.numel() * 4;
  payload.reserve(total);
  for (const auto& na : arrays)
    for (float v : na.second.data) append_f32_le(payload, v);

  const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());

  std::ostringstream header;
  header << kContainerMagic << "\n";
  for (const auto& kv : meta) header << "meta " << kv.first << " " << kv.second << "\n";
  for (const auto& na : arrays) {
    header << "array " << na.first << " f32 " << na.second.rank();
    for (int d : na.second.shape) header << " " << d;
    header << "\n";
  }
  header << "payload " << payload.size() << " " << hex64(checksum) << "\n";
  header << "DATA\n";

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    require(os.good(), "container: cannot write " + tmp.string());
    const std::string h = header.str();
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    require(os.good(), "container: write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

ArrayFile ArrayFile::load(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "container: cannot read " + path.string());

  ArrayFile af;
  std::string line;
  require(std::getline(is, line) && line == kContainerMagic,
          "container: bad magic in " + path.string());

  struct ArrayDecl {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<ArrayDecl> decls;
  std::size_t payload_bytes = 0;
  std::string checksum_hex;
  bool have_payload_line = false;

  while (std::getline(is, line)) {
    if (line == "DATA") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      af.meta.emplace_back(key, value);
    } else if (tag == "array") {
      ArrayDecl d;
      std::string dtype;
      int rank = 0;
      ls >> d.name >> dtype >> rank;
      require(dtype == "f32", "container: unsupported dtype " + dtype);
      require(rank >= 1 && rank <= 8, "container: bad rank");
      for (int i = 0; i < rank; ++i) {
        int e = 0;
        ls >> e;
        d.shape.push_back(e);
      }
      require(static_cast<bool>(ls), "container: malformed array line: " + line);
      decls.push_back(std::move(d));
    } else if (tag == "payload") {
      ls >> payload_bytes >> checksum_hex;
      require(static_cast<bool>(ls), "container: malformed payload line");
      have_payload_line = true;
    } else {
      fail(ErrorKind::data, "container: unknown header line: " + line);
    }
  }
  require(have_payload_line, "container: truncated header in " + path.string());

  std::string payload(payload_bytes, '\0');
  is.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  require(static_cast<std::size_t>(is.gcount()) == payload_bytes,
          "container: truncated payload in " + path.string());

  const std::uint64_t checksum = fnv1a64(payload.data(), payload.size());
  require(hex64(checksum) == checksum_hex,
          "container: checksum mismatch in " + path.string());

  std::size_t offset = 0;
  for (const auto& d : decls) {
    const std::size_t n = Tensor::numel_of(d.shape);
    require(offset + n * 4 <= payload_bytes,
            "container: payload shorter than declared arrays");
    Tensor t(d.shape);
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
    for (std::size_t i = 0; i < n; ++i) t.data[i] = read_f32_le(p + i * 4);
    offset += n * 4;
    af.arrays.emplace_back(d.name, std::move(t));
  }
  require(offset == payload_bytes, "container: trailing payload bytes");
  return af;
}

// ---- checkpoints ----

std::uint64_t run_config_hash(const NetConfig& net, const PrepConfig& prep,
                              const SplitGeometry& geom) {
  std::ostringstream os;
  os << net.describe() << "|" << prep.describe() << "|geom:" << geom.parts
     << "," << geom.overlap << "," << geom.frame_height;
  return fnv1a64(os.str());
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelParams& params,
                     const NetConfig& net, const PrepConfig& prep,
                     const SplitGeometry& geom, const ChannelStats& stats,
                     int epoch, const Pcg32& rng) {
  ArrayFile af;
  af.set_meta("format", "stfmm-checkpoint 1");
  af.set_meta("config_hash", hex64(run_config_hash(net, prep, geom)));
  af.set_meta("epoch", std::to_string(epoch));
  const auto [rng_state, rng_inc] = rng.save_state();
  af.set_meta("rng.algorithm", Pcg32::kAlgorithm);
  af.set_meta("rng.state", std::to_string(rng_state));
  af.set_meta("rng.inc", std::to_string(rng_inc));

  af.set_meta("net.parts", std::to_string(net.parts));
  af.set_meta("net.conv_channels",
              join_ints({net.conv_channels[0], net.conv_channels[1],
                         net.conv_channels[2]}));
  af.set_meta("net.kernel", std::to_string(net.kernel));
  af.set_meta("net.padding", std::to_string(net.padding));
  af.set_meta("net.pool_window", std::to_string(net.pool_window));
  af.set_meta("net.pool_stride", std::to_string(net.pool_stride));
  af.set_meta("net.spp_bins", join_ints(net.spp_bins));
  af.set_meta("net.embed_dim", std::to_string(net.embed_dim));
  af.set_meta("net.classes", std::to_string(net.classes));
  af.set_meta("net.margin", fmt_double(net.margin));
  af.set_meta("net.fully_shared", net.fully_shared ? "1" : "0");
  af.set_meta("net.dropout", fmt_double(net.dropout));
  af.set_meta("net.weight_decay", fmt_double(net.weight_decay));

  af.set_meta("prep.frame_height", std::to_string(prep.frame_height));
  af.set_meta("prep.frame_width", std::to_string(prep.frame_width));
  af.set_meta("prep.crop_margin", std::to_string(prep.crop_margin));
  af.set_meta("prep.flow_window", std::to_string(prep.flow_window));
  af.set_meta("prep.flow_tau", fmt_double(prep.flow_tau));
  af.set_meta("prep.flow_dmax", fmt_double(prep.flow_dmax));

  af.set_meta("geom.overlap", std::to_string(geom.overlap));

  for (int c = 0; c < 3; ++c) {
    af.set_meta("stats.mean" + std::to_string(c),
                fmt_double(stats.mean[static_cast<std::size_t>(c)]));
    af.set_meta("stats.stddev" + std::to_string(c),
                fmt_double(stats.stddev[static_cast<std::size_t>(c)]));
  }

  const_cast<ModelParams&>(params).for_each(
      [&af](const std::string& name, Tensor& t) {
        af.arrays.emplace_back(name, t);
      });
  af.save(path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path,
                                 std::optional<std::uint64_t> expected_hash) {
  const ArrayFile af = ArrayFile::load(path);
  require(af.meta_or_fail("format") == "stfmm-checkpoint 1",
          "checkpoint: unrecognized format in " + path.string());

  LoadedCheckpoint ck;
  ck.net.parts = std::stoi(af.meta_or_fail("net.parts"));
  const auto conv = split_ints(af.meta_or_fail("net.conv_channels"));
  require(conv.size() == 3, "checkpoint: bad conv channel list");
  ck.net.conv_channels = {conv[0], conv[1], conv[2]};
  ck.net.kernel = std::stoi(af.meta_or_fail("net.kernel"));
  ck.net.padding = std::stoi(af.meta_or_fail("net.padding"));
  ck.net.pool_window = std::stoi(af.meta_or_fail("net.pool_window"));
  ck.net.pool_stride = std::stoi(af.meta_or_fail("net.pool_stride"));
  ck.net.spp_bins = split_ints(af.meta_or_fail("net.spp_bins"));
  ck.net.embed_dim = std::stoi(af.meta_or_fail("net.embed_dim"));
  ck.net.classes = std::stoi(af.meta_or_fail("net.classes"));
  ck.net.margin = std::stof(af.meta_or_fail("net.margin"));
  ck.net.fully_shared = af.meta_or_fail("net.fully_shared") == "1";
  ck.net.dropout = std::stof(af.meta_or_fail("net.dropout"));
  ck.net.weight_decay = std::stof(af.meta_or_fail("net.weight_decay"));

  ck.prep.frame_height = std::stoi(af.meta_or_fail("prep.frame_height"));
  ck.prep.frame_width = std::stoi(af.meta_or_fail("prep.frame_width"));
  ck.prep.crop_margin = std::stoi(af.meta_or_fail("prep.crop_margin"));
  ck.prep.flow_window = std::stoi(af.meta_or_fail("prep.flow_window"));
  ck.prep.flow_tau = std::stod(af.meta_or_fail("prep.flow_tau"));
  ck.prep.flow_dmax = std::stod(af.meta_or_fail("prep.flow_dmax"));

  ck.geometry = split_geometry(ck.prep.frame_height, ck.net.parts,
                               std::stoi(af.meta_or_fail("geom.overlap")));

  for (int c = 0; c < 3; ++c) {
    ck.stats.mean[static_cast<std::size_t>(c)] =
        std::stod(af.meta_or_fail("stats.mean" + std::to_string(c)));
    ck.stats.stddev[static_cast<std::size_t>(c)] =
        std::stod(af.meta_or_fail("stats.stddev" + std::to_string(c)));
  }

  ck.epoch = std::stoi(af.meta_or_fail("epoch"));
  ck.rng_state = std::stoull(af.meta_or_fail("rng.state"));
  ck.rng_inc = std::stoull(af.meta_or_fail("rng.inc"));

  const std::uint64_t stored_hash =
      std::stoull(af.meta_or_fail("config_hash"), nullptr, 16);
  const std::uint64_t computed =
      run_config_hash(ck.net, ck.prep, ck.geometry);
  require(stored_hash == computed,
          "checkpoint: stored config hash disagrees with its own metadata");
  ck.config_hash = stored_hash;
  if (expected_hash)
    require(*expected_hash == stored_hash,
            "checkpoint: configuration/geometry mismatch (checkpoint " +
                hex64(stored_hash) + ", requested " + hex64(*expected_hash) +
                ")");

  ck.params = init_params<float>(ck.net, 0);
  ck.params.for_each([&af, &path](const std::string& name, Tensor& t) {
    const Tensor* stored = af.find_array(name);
    require(stored != nullptr,
            "checkpoint: missing array '" + name + "' in " + path.string());
    require(stored->shape == t.shape,
            "checkpoint: shape mismatch for array '" + name + "'");
    t = *stored;
  });
  return ck;
}

// ---- preprocessed-sequence cache ----

void save_sequence_cache(const fs::path& path, const VideoSequence& seq,
                         const ChannelStats& stats) {
  require(!seq.frames.empty(), "cache: empty sequence");
  ArrayFile af;
  af.set_meta("format", "stfmm-seqcache 1");
  af.set_meta("person", seq.person_id);
  af.set_meta("camera", std::to_string(seq.camera_id));
  af.set_meta("frames", std::to_string(seq.frames.size()));
  af.set_meta("height", std::to_string(seq.frames.front().dim(1)));
  af.set_meta("width", std::to_string(seq.frames.front().dim(2)));
  af.set_meta("channel_order", "Y,U,V,FLOWX,FLOWY");
  af.set_meta("stats_checksum", hex64(stats.checksum()));
  char name[24];
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame_%05zu", t);
    af.arrays.emplace_back(name, seq.frames[t]);
  }
  af.save(path);
}

VideoSequence load_sequence_cache(const fs::path& path,
                                  const ChannelStats& expected_stats) {
  const ArrayFile af = ArrayFile::load(path);
  require(af.meta_or_fail("format") == "stfmm-seqcache 1",
          "cache: unrecognized format in " + path.string());
  require(af.meta_or_fail("stats_checksum") == hex64(expected_stats.checksum()),
          "cache: " + path.string() +
              " was built with different channel statistics");
  VideoSequence seq;
  seq.person_id = af.meta_or_fail("person");
  seq.camera_id = std::stoi(af.meta_or_fail("camera"));
  const std::size_t frames = std::stoul(af.meta_or_fail("frames"));
  require(af.arrays.size() == frames, "cache: frame count mismatch");
  for (const auto& na : af.arrays) {
    require(na.second.rank() == 3 && na.second.dim(0) == 5,
            "cache: frames must be 5-channel");
    seq.frames.push_back(na.second);
  }
  return seq;
}

// ---- channel statistics persistence ----

void save_stats(const fs::path& path, const ChannelStats& stats) {
  std::ofstream os(path);
  require(os.good(), "stats: cannot write " + path.string());
  os.precision(17);
  for (int c = 0; c < 3; ++c)
    os << "mean" << c << " = " << stats.mean[static_cast<std::size_t>(c)]
       << "\nstddev" << c << " = "
       << stats.stddev[static_cast<std::size_t>(c)] << "\n";
  os << "checksum = " << hex64(stats.checksum()) << "\n";
  require(os.good(), "stats: write failed for " + path.string());
}

ChannelStats load_stats(const fs::path& path) {
  std::ifstream is(path);
  require(is.good(), "stats: cannot read " + path.string());
  ChannelStats st;
  std::string line;
  std::string checksum;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "stats: malformed line: " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(value);
    if (key == "checksum") {
      checksum = value;
    } else if (key.rfind("mean", 0) == 0) {
      st.mean[static_cast<std::size_t>(key[4] - '0')] = std::stod(value);
    } else if (key.rfind("stddev", 0) == 0) {
      st.stddev[static_cast<std::size_t>(key[6] - '0')] = std::stod(value);
    }
  }
  require(checksum == hex64(st.checksum()),
          "stats: checksum mismatch in " + path.string());
  return st;
}

}  // namespace stfmm
