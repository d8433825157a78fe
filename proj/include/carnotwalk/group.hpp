#pragma once

// Carnot group descriptors in exponential coordinates of the first kind.
//
// A group of step r is determined by layer dimensions (d_1, ..., d_r) and
// structure constants on an adapted basis: [X_i, X_j] = sum_k c_{ij}^k X_k.
// Points and Lie-algebra elements are both coordinate vectors in R^N; exp and
// log are the identity on coordinates, the inverse is negation.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace carnot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// [X_i, X_j] = c * X_k with i < j, indices 0-based. JSON uses 1-based.
struct StructureEntry {
  int i = 0, j = 0, k = 0;
  double c = 0.0;
};

/// Point of the group, exponential coordinates of the first kind.
struct GroupElement {
  Vec x;
};

/// Element of the Lie algebra on the adapted basis.
struct LieVector {
  Vec v;
};

inline GroupElement group_exp(const LieVector& a) { return {a.v}; }
inline LieVector group_log(const GroupElement& g) { return {g.x}; }

struct ValidationReport {
  bool ok = true;
  std::vector<std::pair<std::string, bool>> checks;  // (identity, passed)
  std::string detail;                                // first failure description

  void record(const std::string& name, bool passed, const std::string& why = "") {
    checks.emplace_back(name, passed);
    if (!passed && ok) {
      ok = false;
      detail = name + (why.empty() ? "" : (": " + why));
    }
  }
};

class CarnotGroup {
 public:
  // ---- construction ----

  static CarnotGroup from_structure_constants(std::vector<int> layer_dims,
                                              std::vector<StructureEntry> entries,
                                              std::optional<Mat> horizontal_metric = {}) {
    CarnotGroup g;
    g.layer_dims_ = std::move(layer_dims);
    g.init_layout();
    g.entries_ = canonicalize(g, std::move(entries));
    g.metric_ = horizontal_metric ? *horizontal_metric
                                  : Mat(Mat::Identity(g.layer_dims_[0], g.layer_dims_[0]));
    ValidationReport rep = check(g.layer_dims_, g.entries_, g.metric_);
    if (!rep.ok) throw std::invalid_argument("carnot group validation failed: " + rep.detail);
    g.finish_setup();
    return g;
  }

  /// Heisenberg-type group of even horizontal dimension: layers (d1, 1),
  /// [X_{2i-1}, X_{2i}] = X_{d1+1}.
  static CarnotGroup heisenberg(int d1) {
    if (d1 < 2 || d1 % 2 != 0) throw std::invalid_argument("heisenberg requires even d1 >= 2");
    std::vector<StructureEntry> e;
    for (int i = 0; i + 1 < d1; i += 2) e.push_back({i, i + 1, d1, 1.0});
    return from_structure_constants({d1, 1}, std::move(e));
  }

  /// Step-3 Engel group: layers (2, 1, 1), [X1,X2] = X3, [X1,X3] = X4.
  static CarnotGroup engel() {
    return from_structure_constants({2, 1, 1}, {{0, 1, 2, 1.0}, {0, 2, 3, 1.0}});
  }

  /// Step-2 group with prescribed layer-2 forms: coordinate d1+j of x*y picks
  /// up x^T A_j y, A_j skew. Structure constants are c_{kl}^j = 2 (A_j)_{kl}.
  static CarnotGroup step2_from_matrices(const std::vector<Mat>& forms,
                                         std::optional<Mat> horizontal_metric = {}) {
    if (forms.empty()) throw std::invalid_argument("step2_from_matrices: need at least one form");
    const int d1 = static_cast<int>(forms[0].rows());
    std::vector<StructureEntry> e;
    for (int j = 0; j < static_cast<int>(forms.size()); ++j) {
      const Mat& A = forms[j];
      if (A.rows() != d1 || A.cols() != d1)
        throw std::invalid_argument("step2_from_matrices: form size mismatch");
      if ((A + A.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("step2_from_matrices: form not skew-symmetric");
      for (int k = 0; k < d1; ++k)
        for (int l = k + 1; l < d1; ++l)
          if (A(k, l) != 0.0) e.push_back({k, l, d1 + j, 2.0 * A(k, l)});
    }
    return from_structure_constants({d1, static_cast<int>(forms.size())}, std::move(e),
                                    std::move(horizontal_metric));
  }

  /// Step-1 degenerate case: the abelian group R^{d1}. Admitted so that
  /// scalar Cramér reductions run through the same machinery.
  static CarnotGroup abelian(int d1) {
    if (d1 < 1) throw std::invalid_argument("abelian requires d1 >= 1");
    return from_structure_constants({d1}, {});
  }

  // ---- descriptor access ----

  int dim() const { return dim_; }
  int step() const { return static_cast<int>(layer_dims_.size()); }
  int horizontal_dim() const { return layer_dims_[0]; }
  const std::vector<int>& layer_dims() const { return layer_dims_; }

  /// Offset of 1-based layer j into the coordinate vector.
  int layer_offset(int j) const { return offsets_[j - 1]; }
  int layer_dim(int j) const { return layer_dims_[j - 1]; }

  /// Homogeneity sigma of a coordinate (layer index it belongs to).
  int homogeneity(int coord) const { return sigma_[coord]; }

  /// Homogeneous dimension sum_j j * d_j.
  int homogeneous_dimension() const { return hom_dim_; }

  const std::vector<StructureEntry>& structure_constants() const { return entries_; }
  const Mat& horizontal_metric() const { return metric_; }

  /// W with W W^T = M^{-1}; maps standard normals to the metric-whitened law.
  const Mat& sampling_transform() const { return whiten_; }
  bool metric_is_identity() const { return metric_identity_; }

  /// Skew forms A_j for step <= 2; layer-2 coordinate j of x*y is
  /// x_2j + y_2j + x^T A_j y on horizontal parts.
  const std::vector<Mat>& step2_forms() const { return step2_forms_; }

  // ---- algebra primitives ----

  Vec bracket(const Vec& u, const Vec& v) const {
    Vec out = Vec::Zero(dim_);
    for (const auto& e : entries_) out[e.k] += e.c * (u[e.i] * v[e.j] - u[e.j] * v[e.i]);
    return out;
  }

  /// Inner product and norm on the horizontal layer (d1-vectors).
  double h_inner(const Vec& a, const Vec& b) const {
    return metric_identity_ ? a.dot(b) : a.dot(metric_ * b);
  }
  double h_norm(const Vec& a) const { return std::sqrt(h_inner(a, a)); }

  // ---- validation ----

  /// Runs every construction-time identity; does not throw.
  static ValidationReport check(const std::vector<int>& layer_dims,
                                const std::vector<StructureEntry>& entries, const Mat& metric) {
    ValidationReport rep;
    const int r = static_cast<int>(layer_dims.size());
    bool dims_ok = r >= 1;
    for (int d : layer_dims) dims_ok = dims_ok && d >= 1;
    rep.record("layer_dims", dims_ok, "each layer must be nonempty");
    if (!dims_ok) return rep;

    const int N = std::accumulate(layer_dims.begin(), layer_dims.end(), 0);
    std::vector<int> sigma(N);
    {
      int c = 0;
      for (int j = 0; j < r; ++j)
        for (int d = 0; d < layer_dims[j]; ++d) sigma[c++] = j + 1;
    }

    bool idx_ok = true, grading_ok = true;
    for (const auto& e : entries) {
      if (e.i < 0 || e.j < 0 || e.k < 0 || e.i >= N || e.j >= N || e.k >= N || e.i == e.j)
        idx_ok = false;
      else if (sigma[e.k] != sigma[e.i] + sigma[e.j])
        grading_ok = false;
    }
    rep.record("index_range", idx_ok);
    rep.record("grading", grading_ok, "c_ij^k = 0 unless sigma_k = sigma_i + sigma_j");
    if (!idx_ok || !grading_ok) return rep;

    CarnotGroup tmp;
    tmp.layer_dims_ = layer_dims;
    tmp.init_layout();
    tmp.entries_ = entries;

    // Jacobi over all basis triples.
    double jac = 0.0;
    for (int a = 0; a < N; ++a) {
      Vec ea = Vec::Unit(N, a);
      for (int b = a + 1; b < N; ++b) {
        Vec eb = Vec::Unit(N, b);
        Vec ab = tmp.bracket(ea, eb);
        for (int c = b + 1; c < N; ++c) {
          Vec ec = Vec::Unit(N, c);
          Vec res = tmp.bracket(ea, tmp.bracket(eb, ec)) + tmp.bracket(eb, tmp.bracket(ec, ea)) +
                    tmp.bracket(ec, ab);
          jac = std::max(jac, res.cwiseAbs().maxCoeff());
        }
      }
    }
    rep.record("jacobi", jac <= 1e-12, "max residual " + std::to_string(jac));

    // Generation: [V_1, V_{j-1}] must span V_j.
    bool gen_ok = true;
    std::string gen_why;
    for (int j = 2; j <= r; ++j) {
      const int dj = layer_dims[j - 1], off = tmp.offsets_[j - 1];
      Mat span(dj, layer_dims[0] * layer_dims[j - 2]);
      int col = 0;
      for (int a = 0; a < layer_dims[0]; ++a)
        for (int b = 0; b < layer_dims[j - 2]; ++b) {
          Vec w = tmp.bracket(Vec::Unit(N, a), Vec::Unit(N, tmp.offsets_[j - 2] + b));
          span.col(col++) = w.segment(off, dj);
        }
      Eigen::ColPivHouseholderQR<Mat> qr(span);
      qr.setThreshold(1e-10);
      if (qr.rank() < dj) {
        gen_ok = false;
        gen_why = "layer " + std::to_string(j) + " not spanned by [V1, V" + std::to_string(j - 1) +
                  "]";
        break;
      }
    }
    rep.record("generation", gen_ok, gen_why);

    // Horizontal metric: symmetric positive definite.
    bool m_ok = metric.rows() == layer_dims[0] && metric.cols() == layer_dims[0] &&
                (metric - metric.transpose()).cwiseAbs().maxCoeff() <= 1e-12;
    if (m_ok) {
      Eigen::SelfAdjointEigenSolver<Mat> es(metric);
      m_ok = es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    }
    rep.record("metric_spd", m_ok);
    return rep;
  }

  ValidationReport validate() const { return check(layer_dims_, entries_, metric_); }

  // ---- serialization (indices 1-based on the wire) ----

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["step"] = step();
    j["layer_dims"] = layer_dims_;
    auto& sc = j["structure_constants"] = nlohmann::json::array();
    for (const auto& e : entries_)
      sc.push_back(nlohmann::json::array({e.i + 1, e.j + 1, e.k + 1, e.c}));
    std::vector<std::vector<double>> m(metric_.rows(), std::vector<double>(metric_.cols()));
    for (int a = 0; a < metric_.rows(); ++a)
      for (int b = 0; b < metric_.cols(); ++b) m[a][b] = metric_(a, b);
    j["horizontal_metric"] = m;
    return j;
  }

  static CarnotGroup from_json(const nlohmann::json& j) {
    for (const auto& [key, val] : j.items()) {
      (void)val;
      if (key != "step" && key != "layer_dims" && key != "structure_constants" &&
          key != "horizontal_metric")
        throw std::invalid_argument("group json: unknown key '" + key + "'");
    }
    std::vector<int> dims = j.at("layer_dims").get<std::vector<int>>();
    if (j.contains("step") && j.at("step").get<int>() != static_cast<int>(dims.size()))
      throw std::invalid_argument("group json: step does not match layer_dims");
    std::vector<StructureEntry> entries;
    if (j.contains("structure_constants"))
      for (const auto& row : j.at("structure_constants")) {
        if (!row.is_array() || row.size() != 4)
          throw std::invalid_argument("group json: structure constant rows are [i, j, k, value]");
        entries.push_back({row[0].get<int>() - 1, row[1].get<int>() - 1, row[2].get<int>() - 1,
                           row[3].get<double>()});
      }
    std::optional<Mat> metric;
    if (j.contains("horizontal_metric")) {
      auto rows = j.at("horizontal_metric").get<std::vector<std::vector<double>>>();
      Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (int a = 0; a < m.rows(); ++a) {
        if (static_cast<int>(rows[a].size()) != m.cols())
          throw std::invalid_argument("group json: ragged horizontal_metric");
        for (int b = 0; b < m.cols(); ++b) m(a, b) = rows[a][b];
      }
      metric = std::move(m);
    }
    return from_structure_constants(std::move(dims), std::move(entries), std::move(metric));
  }

  static CarnotGroup load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open group file: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

  /// Named builtin or a path to a JSON descriptor.
  static CarnotGroup named(const std::string& name) {
    if (name == "heisenberg") return heisenberg(2);
    if (name == "engel") return engel();
    if (name == "line") return abelian(1);
    if (name.size() > 5 && name.rfind(".json") == name.size() - 5) return load(name);
    throw std::invalid_argument("unknown group '" + name + "' (heisenberg, engel, line, or *.json)");
  }

 private:
  void init_layout() {
    offsets_.assign(layer_dims_.size() + 1, 0);
    for (size_t j = 0; j < layer_dims_.size(); ++j) offsets_[j + 1] = offsets_[j] + layer_dims_[j];
    dim_ = offsets_.back();
    sigma_.resize(dim_);
    hom_dim_ = 0;
    for (size_t j = 0; j < layer_dims_.size(); ++j) {
      hom_dim_ += static_cast<int>(j + 1) * layer_dims_[j];
      for (int d = 0; d < layer_dims_[j]; ++d) sigma_[offsets_[j] + d] = static_cast<int>(j + 1);
    }
  }

  // Orients every entry to i < j and merges duplicates; conflicting
  // duplicates (violating antisymmetry) are rejected.
  static std::vector<StructureEntry> canonicalize(const CarnotGroup& g,
                                                  std::vector<StructureEntry> in) {
    std::vector<StructureEntry> out;
    for (auto e : in) {
      if (e.i > e.j) {
        std::swap(e.i, e.j);
        e.c = -e.c;
      }
      bool merged = false;
      for (auto& o : out)
        if (o.i == e.i && o.j == e.j && o.k == e.k) {
          if (std::abs(o.c - e.c) > 1e-12)
            throw std::invalid_argument("carnot group validation failed: antisymmetry");
          merged = true;
          break;
        }
      if (!merged && e.c != 0.0) out.push_back(e);
    }
    (void)g;
    return out;
  }

  void finish_setup() {
    // Whitening transform for metric-adapted Gaussian sampling.
    const int d1 = layer_dims_[0];
    metric_identity_ = (metric_ - Mat::Identity(d1, d1)).cwiseAbs().maxCoeff() == 0.0;
    Eigen::LLT<Mat> llt(metric_);
    whiten_ = llt.matrixL().transpose().solve(Mat::Identity(d1, d1));

    // Closed-form layer-2 forms when the whole bracket lands in layer 2.
    step2_forms_.clear();
    if (step() == 2) {
      const int d2 = layer_dims_[1];
      step2_forms_.assign(d2, Mat::Zero(d1, d1));
      for (const auto& e : entries_) {
        step2_forms_[e.k - d1](e.i, e.j) += 0.5 * e.c;
        step2_forms_[e.k - d1](e.j, e.i) -= 0.5 * e.c;
      }
    }
  }

  std::vector<int> layer_dims_;
  std::vector<int> offsets_;
  std::vector<int> sigma_;
  std::vector<StructureEntry> entries_;
  Mat metric_;
  Mat whiten_;
  std::vector<Mat> step2_forms_;
  int dim_ = 0;
  int hom_dim_ = 0;
  bool metric_identity_ = true;
};

// ---- coordinate-level operations that need only the grading ----

/// Dilation D_a: coordinate of homogeneity s scales by a^s.
inline GroupElement dilate(const CarnotGroup& g, double a, const GroupElement& x) {
  Vec out(g.dim());
  for (int c = 0; c < g.dim(); ++c) out[c] = x.x[c] * std::pow(a, g.homogeneity(c));
  return {out};
}

inline LieVector dilate(const CarnotGroup& g, double a, const LieVector& v) {
  return {dilate(g, a, GroupElement{v.v}).x};
}

inline GroupElement inverse(const CarnotGroup& /*g*/, const GroupElement& x) { return {-x.x}; }

inline GroupElement identity_element(const CarnotGroup& g) { return {Vec::Zero(g.dim())}; }

/// Horizontal projection of log(x): the first d1 coordinates.
inline Vec horizontal_log(const CarnotGroup& g, const GroupElement& x) {
  return x.x.head(g.horizontal_dim());
}

/// Embeds a horizontal vector into the algebra (zero higher layers).
inline Vec embed_horizontal(const CarnotGroup& g, const Vec& h) {
  Vec out = Vec::Zero(g.dim());
  out.head(g.horizontal_dim()) = h;
  return out;
}

/// Homogeneous norm (sum_j ||x^(j)||^{2r!/j})^{1/2r!}, evaluated in scaled
/// form so large coordinates cannot overflow the exponent range.
inline double homogeneous_norm(const CarnotGroup& g, const Vec& coords) {
  const int r = g.step();
  double fact = 1.0;
  for (int j = 2; j <= r; ++j) fact *= j;
  const double p = 2.0 * fact;

  // s = max_j ||x^(j)||^{1/j} is the natural scale of x.
  double s = 0.0;
  for (int j = 1; j <= r; ++j) {
    const double nj = coords.segment(g.layer_offset(j), g.layer_dim(j)).norm();
    if (nj > 0.0) s = std::max(s, std::pow(nj, 1.0 / j));
  }
  if (s == 0.0) return 0.0;

  double acc = 0.0;
  for (int j = 1; j <= r; ++j) {
    const double nj = coords.segment(g.layer_offset(j), g.layer_dim(j)).norm();
    if (nj > 0.0) acc += std::exp((p / j) * (std::log(nj) - j * std::log(s)));
  }
  return s * std::pow(acc, 1.0 / p);
}

inline double homogeneous_norm(const CarnotGroup& g, const GroupElement& x) {
  return homogeneous_norm(g, x.x);
}

}  // namespace carnot
