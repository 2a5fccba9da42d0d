#include "stfmm/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace stfmm {

const std::vector<ConfigKey>& Config::registry() {
  static const std::vector<ConfigKey> keys = {
      {"data.root", "", "dataset root directory"},
      {"data.layout", "generic", "dataset layout: generic | ilids | prid"},
      {"cache.dir", "", "preprocessed-sequence cache directory (optional)"},

      {"prep.height", "128", "nominal frame height after cropping"},
      {"prep.width", "64", "nominal frame width after cropping"},
      {"prep.crop_margin", "4", "replicate padding per side before crops"},
      {"prep.flow_window", "5", "optical-flow structure-tensor window"},
      {"prep.flow_tau", "1e-4", "optical-flow eigenvalue threshold"},
      {"prep.flow_dmax", "8", "optical-flow clip displacement (px)"},

      {"net.parts", "3", "number of horizontal body parts N"},
      {"net.overlap", "13", "adjacent-part overlap p (px)"},
      {"net.conv_channels", "16,32,32", "channels of the three conv layers"},
      {"net.kernel", "5", "conv kernel size (odd)"},
      {"net.padding", "2", "conv zero padding"},
      {"net.pool_window", "2", "max-pool window"},
      {"net.pool_stride", "2", "max-pool stride"},
      {"net.spp_bins", "8,4,2,1", "pyramid bin sides, decreasing to 1"},
      {"net.embed_dim", "128", "recurrent feature size d"},
      {"net.margin", "2", "Siamese margin m"},
      {"net.share", "per_part", "weight sharing: per_part | fully_shared"},
      {"net.dropout", "0", "classifier-input dropout (0 disables)"},
      {"net.weight_decay", "0", "L2 weight decay (0 disables)"},

      {"train.k", "16", "sub-sequence length"},
      {"train.lr", "1e-3", "SGD learning rate"},
      {"train.epochs", "700", "training epochs"},
      {"train.seed", "1", "run seed"},
      {"train.checkpoint_interval", "50", "epochs between checkpoints"},
      {"train.clip_norm", "0", "gradient norm clip (0 disables)"},
      {"train.threads", "0", "worker threads (0 = hardware)"},

      {"eval.max_test_len", "128", "max frames per test sequence"},
      {"eval.ranks", "1,5,10,20", "ranks reported in the CMC table"},
      {"eval.which", "test", "identity list to evaluate: test | train"},

      {"split.count", "10", "number of train/test splits to generate"},
      {"split.seed", "1", "split generator seed"},

      {"synth.identities", "8", "synthetic dataset identity count"},
      {"synth.frames", "24", "synthetic frames per camera"},
      {"synth.height", "64", "synthetic frame height"},
      {"synth.width", "32", "synthetic frame width"},
      {"synth.seed", "7", "synthetic dataset seed"},

      {"sweep.parts", "1,2,3,4", "part counts visited by sweep"},
      {"sweep.overlaps", "7,13,20,26,32", "overlaps visited by sweep"},

      {"gradcheck.seed", "42", "gradient-check seed"},
      {"gradcheck.instances", "100", "random instances per primitive"},

      {"run.dir", "", "run directory (default: <cwd>/runs/<stamp>-<tag>)"},
      {"run.tag", "run", "tag appended to generated run directory names"},
  };
  return keys;
}

bool Config::is_known_key(const std::string& key) {
  for (const ConfigKey& k : registry())
    if (key == k.name) return true;
  return false;
}

Config Config::defaults() {
  Config c;
  for (const ConfigKey& k : registry()) c.values_[k.name] = k.default_value;
  return c;
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(is.good(), "config: cannot read " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto not_blank = line.find_first_not_of(" \t\r");
    if (not_blank == std::string::npos) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: missing '=' at " + path.string() + ":" +
                std::to_string(line_no),
            ErrorKind::usage);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
    };
    trim(key);
    trim(value);
    set(key, value);
  }
}

void Config::set(const std::string& key, const std::string& value) {
  require(is_known_key(key), "config: unknown key '" + key + "'",
          ErrorKind::usage);
  values_[key] = value;
}

std::string Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  require(it != values_.end(), "config: unknown key '" + key + "'",
          ErrorKind::usage);
  return it->second;
}

int Config::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::exception&) {
    fail(ErrorKind::usage, "config: '" + key + "' must be an integer");
  }
}

double Config::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    fail(ErrorKind::usage, "config: '" + key + "' must be a number");
  }
}

std::uint64_t Config::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    fail(ErrorKind::usage, "config: '" + key + "' must be an unsigned integer");
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  fail(ErrorKind::usage, "config: '" + key + "' must be a boolean");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  const std::string v = get(key);
  std::vector<int> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      fail(ErrorKind::usage, "config: '" + key + "' must be a comma list of integers");
    }
  }
  require(!out.empty(), "config: '" + key + "' is empty", ErrorKind::usage);
  return out;
}

std::string Config::resolved_text() const {
  std::ostringstream os;
  for (const auto& kv : values_) os << kv.first << " = " << kv.second << "\n";
  return os.str();
}

NetConfig Config::net() const {
  NetConfig n;
  n.parts = get_int("net.parts");
  const auto conv = get_int_list("net.conv_channels");
  require(conv.size() == 3, "config: net.conv_channels needs three entries",
          ErrorKind::usage);
  n.conv_channels = {conv[0], conv[1], conv[2]};
  n.kernel = get_int("net.kernel");
  n.padding = get_int("net.padding");
  n.pool_window = get_int("net.pool_window");
  n.pool_stride = get_int("net.pool_stride");
  n.spp_bins = get_int_list("net.spp_bins");
  n.embed_dim = get_int("net.embed_dim");
  n.margin = static_cast<float>(get_double("net.margin"));
  const std::string share = get("net.share");
  if (share == "per_part") {
    n.fully_shared = false;
  } else if (share == "fully_shared") {
    n.fully_shared = true;
  } else {
    fail(ErrorKind::usage,
         "config: net.share must be per_part or fully_shared");
  }
  n.dropout = static_cast<float>(get_double("net.dropout"));
  n.weight_decay = static_cast<float>(get_double("net.weight_decay"));
  return n;
}

PrepConfig Config::prep() const {
  PrepConfig p;
  p.frame_height = get_int("prep.height");
  p.frame_width = get_int("prep.width");
  p.crop_margin = get_int("prep.crop_margin");
  p.flow_window = get_int("prep.flow_window");
  p.flow_tau = get_double("prep.flow_tau");
  p.flow_dmax = get_double("prep.flow_dmax");
  require(p.frame_height >= 1 && p.frame_width >= 1, "config: bad frame size",
          ErrorKind::usage);
  require(p.crop_margin >= 0, "config: negative crop margin", ErrorKind::usage);
  require(p.flow_window >= 1 && p.flow_window % 2 == 1,
          "config: flow window must be odd", ErrorKind::usage);
  require(p.flow_dmax > 0, "config: flow_dmax must be positive",
          ErrorKind::usage);
  return p;
}

TrainConfig Config::train() const {
  TrainConfig t;
  t.subseq_len = get_int("train.k");
  t.learning_rate = static_cast<float>(get_double("train.lr"));
  t.epochs = get_int("train.epochs");
  t.seed = get_u64("train.seed");
  t.checkpoint_interval = get_int("train.checkpoint_interval");
  t.clip_norm = static_cast<float>(get_double("train.clip_norm"));
  t.threads = get_int("train.threads");
  return t;
}

}  // namespace stfmm
