#include "cedar/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cedar/data.hpp"
#include "cedar/errors.hpp"

namespace cedar {

ConceptVocabulary load_vocabulary(const std::string& embeddings_path,
                                  const std::string& names_path) {
  ConceptVocabulary v;
  v.t = load_embeddings(embeddings_path);
  std::ifstream is(names_path);
  if (!is) throw IoError("load_vocabulary: cannot open " + names_path);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.names.push_back(line);
  }
  if (static_cast<Index>(v.names.size()) != v.t.rows()) {
    throw DataError("load_vocabulary: " + std::to_string(v.names.size()) +
                    " names for " + std::to_string(v.t.rows()) +
                    " embedding rows");
  }
  for (Index j = 0; j < v.t.rows(); ++j) {
    if (!(v.t.row(j).norm() > 0.0)) {
      throw DataError("load_vocabulary: zero embedding row " +
                      std::to_string(j));
    }
  }
  return v;
}

AxisConceptMap match_axes(const CedarModel& m, const ConceptVocabulary& v) {
  if (v.t.rows() == 0) throw DataError("match_axes: empty vocabulary");
  if (v.t.cols() != m.dim()) {
    throw DimensionError("match_axes: vocabulary dimension " +
                         std::to_string(v.t.cols()) + " does not match model " +
                         std::to_string(m.dim()));
  }
  Vector t_norms(v.t.rows());
  for (Index j = 0; j < v.t.rows(); ++j) {
    t_norms(j) = v.t.row(j).norm();
    if (!(t_norms(j) > 0.0)) {
      throw DataError("match_axes: zero vocabulary row " + std::to_string(j));
    }
  }
  // Rows of U are unit vectors, so cos(c_d, t_j) = <u_d, t_j> / ||t_j||.
  const Matrix scores = m.u * v.t.transpose();
  AxisConceptMap map;
  map.axes.resize(static_cast<std::size_t>(m.dim()));
  for (Index d = 0; d < m.dim(); ++d) {
    Index best = 0;
    double best_cos = scores(d, 0) / t_norms(0);
    for (Index j = 1; j < v.t.rows(); ++j) {
      const double c = scores(d, j) / t_norms(j);
      if (c > best_cos) {
        best = j;
        best_cos = c;
      }
    }
    map.axes[static_cast<std::size_t>(d)] = AxisConcept{best, best_cos};
  }
  return map;
}

Explanation explain(const CedarModel& m, const AxisConceptMap& map,
                    const ConceptVocabulary& v, const Vector& z, Index k,
                    Index sample_id) {
  if (static_cast<Index>(map.axes.size()) != m.dim()) {
    throw DimensionError("explain: axis map does not match model dimension");
  }
  const SparseCode code = encode(m, z, k);
  Explanation e;
  e.sample_id = sample_id;
  for (std::size_t i = 0; i < code.support.size(); ++i) {
    const Index d = code.support[i];
    const auto& ac = map.axes[static_cast<std::size_t>(d)];
    ExplanationEntry entry;
    entry.axis = d;
    entry.concept_name = v.names.at(static_cast<std::size_t>(ac.concept_index));
    entry.coefficient = code.values[i];
    entry.cosine = ac.cosine;
    e.entries.push_back(std::move(entry));
  }
  std::sort(e.entries.begin(), e.entries.end(),
            [](const ExplanationEntry& a, const ExplanationEntry& b) {
              const double ma = std::abs(a.coefficient);
              const double mb = std::abs(b.coefficient);
              if (ma != mb) return ma > mb;
              return a.axis < b.axis;
            });
  return e;
}

std::vector<std::pair<Index, double>> top_activating(const CedarModel& m,
                                                     const Matrix& z, Index d,
                                                     Index m_count) {
  if (d < 0 || d >= m.dim()) {
    throw IndexError("top_activating: axis " + std::to_string(d) +
                     " out of range [0, " + std::to_string(m.dim()) + ")");
  }
  if (m_count < 1) throw ArgumentError("top_activating: m_count must be >= 1");
  if (z.cols() != m.dim()) {
    throw DimensionError("top_activating: data dimension mismatch");
  }
  // Activation of axis d is coordinate d of U(z - b) = <u_d, z - b>.
  const Vector activations =
      (z.rowwise() - m.b.transpose()) * m.u.row(d).transpose();
  std::vector<Index> idx(static_cast<std::size_t>(z.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  const Index take = std::min<Index>(m_count, z.rows());
  auto by_activation = [&](Index a, Index b) {
    if (activations(a) != activations(b)) return activations(a) > activations(b);
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), by_activation);
  std::vector<std::pair<Index, double>> out;
  out.reserve(static_cast<std::size_t>(take));
  for (Index i = 0; i < take; ++i) {
    out.emplace_back(idx[static_cast<std::size_t>(i)],
                     activations(idx[static_cast<std::size_t>(i)]));
  }
  return out;
}

}  // namespace cedar
