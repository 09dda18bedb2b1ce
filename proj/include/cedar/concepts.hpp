#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cedar/model.hpp"

namespace cedar {

/// Precomputed text-concept embeddings, one row per named concept.
struct ConceptVocabulary {
  std::vector<std::string> names;
  Matrix t;  // J x D
};

/// Loads a vocabulary from an EMB1 matrix plus a UTF-8 names file
/// (one name per line, J lines).
ConceptVocabulary load_vocabulary(const std::string& embeddings_path,
                                  const std::string& names_path);

struct AxisConcept {
  Index concept_index = 0;
  double cosine = 0.0;
};

/// Per-axis nearest concept: j*(d) = argmax_j cos(c_d, t_j), full D table.
struct AxisConceptMap {
  std::vector<AxisConcept> axes;
};

AxisConceptMap match_axes(const CedarModel& m, const ConceptVocabulary& v);

struct ExplanationEntry {
  Index axis = 0;
  std::string concept_name;
  double coefficient = 0.0;
  double cosine = 0.0;
};

/// Sparse per-sample explanation, entries ordered by |coefficient|
/// descending (ties by axis index).
struct Explanation {
  Index sample_id = 0;
  std::vector<ExplanationEntry> entries;
};

Explanation explain(const CedarModel& m, const AxisConceptMap& map,
                    const ConceptVocabulary& v, const Vector& z, Index k,
                    Index sample_id = 0);

/// The m_count rows with the largest signed coordinate d of U(z - b),
/// descending; ties resolve toward the lower row index.
std::vector<std::pair<Index, double>> top_activating(const CedarModel& m,
                                                     const Matrix& z, Index d,
                                                     Index m_count);

}  // namespace cedar
