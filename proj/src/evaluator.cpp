#include "stfmm/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace stfmm {

namespace fs = std::filesystem;

FeatureGallery extract_features(const std::vector<const VideoSequence*>& seqs,
                                const ModelParams& params, const NetConfig& net,
                                const PrepConfig& prep,
                                const SplitGeometry& geom, int max_test_len,
                                int threads) {
  require(max_test_len >= 1, "extract: max_test_len must be >= 1");
  for (const VideoSequence* s : seqs)
    require(s && !s->frames.empty(), "extract: empty sequence");

  FeatureGallery gallery;
  gallery.entries.resize(seqs.size());
  parallel_for(static_cast<int>(seqs.size()), threads, [&](int i) {
    const VideoSequence& full = *seqs[static_cast<std::size_t>(i)];
    VideoSequence clipped;
    clipped.person_id = full.person_id;
    clipped.camera_id = full.camera_id;
    const std::size_t keep =
        std::min<std::size_t>(full.frames.size(),
                              static_cast<std::size_t>(max_test_len));
    clipped.frames.assign(full.frames.begin(),
                          full.frames.begin() + static_cast<long>(keep));

    Pcg32 rng(0);
    const VideoSequence cropped = augment_sequence(clipped, rng, false, prep);
    const PartSet parts = split_parts(cropped, geom);
    const SequenceFeature feat = forward_sequence(parts.parts, params, net);

    FeatureEntry& e = gallery.entries[static_cast<std::size_t>(i)];
    e.person_id = full.person_id;
    e.camera_id = full.camera_id;
    e.feature = feat.mixed;
  });
  return gallery;
}

DistanceMatrix distance_matrix(const FeatureGallery& probe,
                               const FeatureGallery& gallery) {
  require(!probe.entries.empty() && !gallery.entries.empty(),
          "distance: empty feature set");
  const std::size_t dim = probe.entries.front().feature.numel();
  for (const auto& e : probe.entries)
    require(e.feature.numel() == dim, "distance: feature dimensionality mismatch");
  for (const auto& e : gallery.entries)
    require(e.feature.numel() == dim, "distance: feature dimensionality mismatch");

  DistanceMatrix m;
  m.probes = static_cast<int>(probe.entries.size());
  m.gallery = static_cast<int>(gallery.entries.size());
  m.d.resize(static_cast<std::size_t>(m.probes) * m.gallery);
  for (int i = 0; i < m.probes; ++i) {
    const float* a = probe.entries[static_cast<std::size_t>(i)].feature.ptr();
    for (int j = 0; j < m.gallery; ++j) {
      const float* b = gallery.entries[static_cast<std::size_t>(j)].feature.ptr();
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(a[k]) - b[k];
        acc += diff * diff;
      }
      m.d[static_cast<std::size_t>(i) * m.gallery + j] = acc;
    }
  }
  return m;
}

CmcCurve cmc_curve(const DistanceMatrix& dist,
                   const std::vector<std::string>& probe_ids,
                   const std::vector<std::string>& gallery_ids) {
  require(static_cast<int>(probe_ids.size()) == dist.probes &&
              static_cast<int>(gallery_ids.size()) == dist.gallery,
          "cmc: identity list / matrix size mismatch");

  CmcCurve curve;
  curve.rates.assign(static_cast<std::size_t>(dist.gallery), 0.0);
  for (int i = 0; i < dist.probes; ++i) {
    int true_j = -1;
    for (int j = 0; j < dist.gallery; ++j)
      if (gallery_ids[static_cast<std::size_t>(j)] ==
          probe_ids[static_cast<std::size_t>(i)]) {
        require(true_j < 0, "cmc: probe identity '" +
                                probe_ids[static_cast<std::size_t>(i)] +
                                "' appears more than once in the gallery");
        true_j = j;
      }
    require(true_j >= 0, "cmc: probe identity '" +
                             probe_ids[static_cast<std::size_t>(i)] +
                             "' absent from the gallery");

    // rank = 1 + number of gallery entries strictly ahead of the true
    // match; ties are broken by gallery index.
    const double dt = dist.at(i, true_j);
    int rank = 1;
    for (int j = 0; j < dist.gallery; ++j) {
      if (j == true_j) continue;
      const double dj = dist.at(i, j);
      if (dj < dt || (dj == dt && j < true_j)) ++rank;
    }
    for (int r = rank; r <= dist.gallery; ++r)
      curve.rates[static_cast<std::size_t>(r - 1)] += 1.0;
  }
  for (double& v : curve.rates) v /= static_cast<double>(dist.probes);
  return curve;
}

CmcCurve average_curves(const std::vector<CmcCurve>& curves) {
  require(!curves.empty(), "cmc: nothing to average");
  const std::size_t n = curves.front().rates.size();
  for (const auto& c : curves)
    require(c.rates.size() == n, "cmc: gallery sizes differ between splits");
  CmcCurve avg;
  avg.rates.assign(n, 0.0);
  for (const auto& c : curves)
    for (std::size_t i = 0; i < n; ++i) avg.rates[i] += c.rates[i];
  for (double& v : avg.rates) v /= static_cast<double>(curves.size());
  return avg;
}

namespace {

void write_curve_csv(const fs::path& path, const CmcCurve& curve) {
  std::ofstream os(path);
  require(os.good(), "eval: cannot write " + path.string());
  os << "rank,matching_rate\n";
  char row[64];
  for (std::size_t r = 0; r < curve.rates.size(); ++r) {
    std::snprintf(row, sizeof(row), "%zu,%.12g\n", r + 1, curve.rates[r]);
    os << row;
  }
}

}  // namespace

EvalReport evaluate_run(const EvalRequest& request) {
  require(!request.splits.empty(), "eval: no splits given");
  const LoadedCheckpoint ck = load_checkpoint(request.checkpoint);

  EvalReport report;
  report.ranks = request.ranks;

  for (const SplitFile& split : request.splits) {
    const std::vector<std::string>& ids =
        request.use_train_side ? split.train_ids : split.test_ids;
    require(!ids.empty(), "eval: split side has no identities");

    std::vector<VideoSequence> probes_data, gallery_data;
    for (const std::string& id : ids) {
      const DatasetIndex::Person* person = request.dataset.find(id);
      require(person != nullptr,
              "eval: identity '" + id + "' not present in the dataset");
      probes_data.push_back(
          prepare_sequence(load_raw_sequence(*person, 1), ck.stats, ck.prep));
      gallery_data.push_back(
          prepare_sequence(load_raw_sequence(*person, 2), ck.stats, ck.prep));
    }

    std::vector<const VideoSequence*> probe_ptrs, gallery_ptrs;
    for (const auto& s : probes_data) probe_ptrs.push_back(&s);
    for (const auto& s : gallery_data) gallery_ptrs.push_back(&s);

    const FeatureGallery probe_feats =
        extract_features(probe_ptrs, ck.params, ck.net, ck.prep, ck.geometry,
                         request.max_test_len, request.threads);
    const FeatureGallery gallery_feats =
        extract_features(gallery_ptrs, ck.params, ck.net, ck.prep, ck.geometry,
                         request.max_test_len, request.threads);

    const DistanceMatrix dist = distance_matrix(probe_feats, gallery_feats);
    std::vector<std::string> probe_ids, gallery_ids;
    for (const auto& e : probe_feats.entries) probe_ids.push_back(e.person_id);
    for (const auto& e : gallery_feats.entries)
      gallery_ids.push_back(e.person_id);
    report.per_split.push_back(cmc_curve(dist, probe_ids, gallery_ids));
  }

  report.averaged = average_curves(report.per_split);

  std::ostringstream table;
  table << "# probe: camera 1, gallery: camera 2 (squared Euclidean)\n";
  table << "# sequences truncated to max_test_len = " << request.max_test_len
        << " frames\n";
  table << "# splits averaged: " << report.per_split.size() << "\n";
  table << "CMC Rank";
  for (int r : report.ranks) table << "  R=" << r;
  table << "\nmatching%";
  for (int r : report.ranks) {
    char cell[16];
    std::snprintf(cell, sizeof(cell), "  %3d",
                  static_cast<int>(std::lround(report.averaged.at_rank(r) * 100.0)));
    table << cell;
  }
  table << "\n";
  report.table_text = table.str();

  if (!request.out_dir.empty()) {
    fs::create_directories(request.out_dir);
    {
      std::ofstream os(request.out_dir / "cmc_table.txt");
      require(os.good(), "eval: cannot write cmc_table.txt");
      os << report.table_text;
    }
    write_curve_csv(request.out_dir / "cmc_curve.csv", report.averaged);
    for (std::size_t s = 0; s < report.per_split.size(); ++s) {
      char name[40];
      std::snprintf(name, sizeof(name), "cmc_curve_split%02zu.csv", s);
      write_curve_csv(request.out_dir / name, report.per_split[s]);
    }
  }
  return report;
}

}  // namespace stfmm
