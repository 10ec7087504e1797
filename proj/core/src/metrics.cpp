#include "sit/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sit/errors.hpp"
#include "sit/warp.hpp"

namespace sit {

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  const int n = int(features.rows());
  if (n < 2) throw InvalidArgument("feature_stats: need at least 2 samples");
  FeatureStats s;
  s.n = n;
  s.mu = features.colwise().mean();
  Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.var_diag = centered.array().square().colwise().sum() / double(n - 1);
  s.var_diag = s.var_diag.cwiseMax(0.0);
  return s;
}

double sfid(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) throw InvalidArgument("sfid: dimension mismatch");
  if ((a.var_diag.array() < 0).any() || (b.var_diag.array() < 0).any())
    throw InvalidArgument("sfid: negative variance");
  double d = (a.mu - b.mu).squaredNorm();
  d += (a.var_diag.array().sqrt() - b.var_diag.array().sqrt()).square().sum();
  return d;
}

EvalManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest: " + path.string());
  EvalManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string trimmed = line;
    auto pos = trimmed.find('#');
    if (pos != std::string::npos) trimmed.resize(pos);
    std::istringstream row(trimmed);
    ManifestEntry e;
    std::string role;
    if (!(row >> e.path)) continue;  // blank or comment-only line
    if (!(row >> e.label >> role))
      throw ConfigError("manifest line " + std::to_string(lineno) +
                        ": expected 'path label role [pair_path]'");
    if (role == "generated")
      e.role = SplitRole::generated;
    else if (role == "reference")
      e.role = SplitRole::reference;
    else
      throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown role '" + role +
                        "' (want generated|reference)");
    row >> e.pair_path;
    m.entries.push_back(std::move(e));
  }
  return m;
}

double MultiScaleL2::distance(const Image& a, const Image& b) const {
  if (!a.same_shape(b)) throw InvalidArgument("perceptual distance: shape mismatch");
  double total = 0.0;
  int used = 0;
  for (int f : factors_) {
    if (a.h % f != 0 || a.w % f != 0) continue;
    Image da = f == 1 ? a : make_box_downsample_plan(a.h, a.w, a.c, f).apply(a);
    Image db = f == 1 ? b : make_box_downsample_plan(b.h, b.w, b.c, f).apply(b);
    total += std::sqrt((da.data - db.data).square().mean());
    ++used;
  }
  if (used == 0) throw InvalidArgument("perceptual distance: no usable scale for this image size");
  return total / used;
}

double csfid(const std::map<std::string, Eigen::MatrixXd>& generated,
             const std::map<std::string, Eigen::MatrixXd>& reference) {
  if (generated.empty()) throw InvalidArgument("csfid: no generated classes");
  double acc = 0.0;
  for (const auto& [label, gen] : generated) {
    auto it = reference.find(label);
    if (it == reference.end())
      throw InvalidArgument("csfid: class '" + label + "' missing on the reference side");
    if (gen.rows() < 2 || it->second.rows() < 2)
      throw InvalidArgument("csfid: class '" + label + "' needs at least 2 samples on each side");
    acc += sfid(feature_stats(gen), feature_stats(it->second));
  }
  return acc / double(generated.size());
}

EvalReport evaluate_manifest(const EvalManifest& manifest, const TextImageEmbedder& embedder,
                             const std::function<Image(const std::string&)>& load,
                             const PerceptualMetric* perceptual) {
  if (manifest.entries.empty()) throw ConfigError("manifest has no entries");
  std::map<std::string, std::vector<Eigen::VectorXd>> gen_rows, ref_rows;
  double pd_sum = 0.0;
  int pd_count = 0;

  for (const ManifestEntry& e : manifest.entries) {
    Image img = load(e.path);
    Eigen::VectorXd emb = embedder.embed_image(img).v;
    (e.role == SplitRole::generated ? gen_rows : ref_rows)[e.label].push_back(std::move(emb));
    if (e.role == SplitRole::generated && !e.pair_path.empty()) {
      if (perceptual == nullptr)
        throw ConfigError("manifest has pair paths but no perceptual metric is registered");
      Image pair = load(e.pair_path);
      pd_sum += perceptual->distance(img, pair);
      ++pd_count;
    }
  }
  if (gen_rows.empty()) throw ConfigError("manifest has no generated entries");
  if (ref_rows.empty()) throw ConfigError("manifest has no reference entries");

  auto to_matrix = [](const std::vector<Eigen::VectorXd>& rows) {
    Eigen::MatrixXd m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(i) = rows[i].transpose();
    return m;
  };

  std::map<std::string, Eigen::MatrixXd> gen, ref;
  std::vector<Eigen::VectorXd> all_gen, all_ref;
  for (const auto& [label, rows] : gen_rows) {
    gen[label] = to_matrix(rows);
    all_gen.insert(all_gen.end(), rows.begin(), rows.end());
  }
  for (const auto& [label, rows] : ref_rows) {
    ref[label] = to_matrix(rows);
    all_ref.insert(all_ref.end(), rows.begin(), rows.end());
  }

  EvalReport report;
  report.sfid = sfid(feature_stats(to_matrix(all_gen)), feature_stats(to_matrix(all_ref)));
  report.csfid = csfid(gen, ref);
  for (const auto& [label, g] : gen) {
    ClassScore cs;
    cs.label = label;
    cs.n_generated = int(g.rows());
    cs.n_reference = int(ref.at(label).rows());
    cs.sfid = sfid(feature_stats(g), feature_stats(ref.at(label)));
    report.per_class.push_back(std::move(cs));
  }
  if (pd_count > 0) report.perceptual_mean = pd_sum / pd_count;
  return report;
}

}  // namespace sit
