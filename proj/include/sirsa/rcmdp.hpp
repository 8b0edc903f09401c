#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirsa/types.hpp"

namespace sirsa {

/// Axis-aligned range of admissible context values.
struct ContextSpace {
  Vec lower;
  Vec upper;

  ContextSpace() = default;
  ContextSpace(Vec lo, Vec hi);

  [[nodiscard]] Eigen::Index dim() const { return lower.size(); }
  [[nodiscard]] Vec midpoint() const { return 0.5 * (lower + upper); }
  [[nodiscard]] Vec half_range() const { return 0.5 * (upper - lower); }
  [[nodiscard]] bool contains(const ContextVector& c) const;
};

/// Box-shaped uncertainty set: c is a member iff |c[i] - center[i]| <= width[i].
struct UncertaintySet {
  Vec center;
  Vec width;

  UncertaintySet() = default;
  UncertaintySet(Vec mu, Vec sigma);

  [[nodiscard]] Eigen::Index dim() const { return center.size(); }
  [[nodiscard]] Vec lower() const { return center - width; }
  [[nodiscard]] Vec upper() const { return center + width; }
};

/// p(Xi): uniform centers over the space, fixed relative width, inward clipping.
struct SetDistribution {
  ContextSpace space;
  double width_fraction = 0.25;
};

struct TaskSuite {
  static constexpr int kVersion = 1;

  std::vector<UncertaintySet> train_sets;
  /// train_contexts[i] are the contexts sampled from train_sets[i].
  std::vector<std::vector<ContextVector>> train_contexts;
  std::vector<UncertaintySet> test_sets;

  [[nodiscard]] std::size_t n_train_contexts() const;
  /// Flattened (set index, context) pairs in set-major order.
  [[nodiscard]] std::vector<std::pair<std::size_t, ContextVector>> flat_train_contexts() const;
};

ContextVector sample_context_uniform(const UncertaintySet& set, Rng& rng);

/// Throws std::invalid_argument on dimension mismatch.
bool set_contains(const UncertaintySet& set, const ContextVector& c);

UncertaintySet sample_set(const SetDistribution& dist, Rng& rng);

/// The set spanning the entire context space.
UncertaintySet max_uncertainty_set(const ContextSpace& space);

TaskSuite make_task_suite(const SetDistribution& dist, int n_train_sets, int contexts_per_set,
                          int n_test_sets, Rng& rng);

void validate(const SetDistribution& dist);

nlohmann::json to_json(const UncertaintySet& set);
UncertaintySet set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskSuite& suite);
TaskSuite suite_from_json(const nlohmann::json& j);

nlohmann::json vec_to_json(const Vec& v);
Vec vec_from_json(const nlohmann::json& j);

}  // namespace sirsa
