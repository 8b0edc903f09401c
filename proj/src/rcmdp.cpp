#include "sirsa/rcmdp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sirsa {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

ContextSpace::ContextSpace(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) {
    throw std::invalid_argument("ContextSpace: lower/upper dimension mismatch");
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(lower[i] <= upper[i])) {
      throw std::invalid_argument("ContextSpace: lower > upper in dimension " + std::to_string(i));
    }
  }
}

bool ContextSpace::contains(const ContextVector& c) const {
  if (c.size() != dim()) return false;
  return ((c.array() >= lower.array()) && (c.array() <= upper.array())).all();
}

UncertaintySet::UncertaintySet(Vec mu, Vec sigma) : center(std::move(mu)), width(std::move(sigma)) {
  if (center.size() != width.size()) {
    throw std::invalid_argument("UncertaintySet: center/width dimension mismatch");
  }
  if ((width.array() < 0.0).any()) {
    throw std::invalid_argument("UncertaintySet: negative width");
  }
}

std::size_t TaskSuite::n_train_contexts() const {
  std::size_t n = 0;
  for (const auto& cs : train_contexts) n += cs.size();
  return n;
}

std::vector<std::pair<std::size_t, ContextVector>> TaskSuite::flat_train_contexts() const {
  std::vector<std::pair<std::size_t, ContextVector>> out;
  for (std::size_t i = 0; i < train_contexts.size(); ++i) {
    for (const auto& c : train_contexts[i]) out.emplace_back(i, c);
  }
  return out;
}

ContextVector sample_context_uniform(const UncertaintySet& set, Rng& rng) {
  ContextVector c(set.dim());
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Eigen::Index i = 0; i < set.dim(); ++i) {
    // Always consume one draw per dimension so streams stay aligned.
    const double u = unit(rng);
    c[i] = set.width[i] == 0.0 ? set.center[i] : set.center[i] + u * set.width[i];
  }
  // Guard the closed boundary against rounding.
  return c.cwiseMax(set.lower()).cwiseMin(set.upper());
}

bool set_contains(const UncertaintySet& set, const ContextVector& c) {
  if (c.size() != set.dim()) {
    throw std::invalid_argument("set_contains: dimension mismatch (set " +
                                std::to_string(set.dim()) + ", context " +
                                std::to_string(c.size()) + ")");
  }
  return ((c - set.center).cwiseAbs().array() <= set.width.array()).all();
}

void validate(const SetDistribution& dist) {
  if (dist.space.dim() == 0) throw std::invalid_argument("SetDistribution: empty context space");
  if (!(dist.width_fraction > 0.0 && dist.width_fraction <= 1.0)) {
    throw std::invalid_argument("SetDistribution: width_fraction must lie in (0, 1]");
  }
}

UncertaintySet sample_set(const SetDistribution& dist, Rng& rng) {
  validate(dist);
  const auto& space = dist.space;
  Vec width = dist.width_fraction * space.half_range();
  Vec center(space.dim());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index i = 0; i < space.dim(); ++i) {
    const double raw = space.lower[i] + unit(rng) * (space.upper[i] - space.lower[i]);
    center[i] = std::clamp(raw, space.lower[i] + width[i], space.upper[i] - width[i]);
  }
  return {center, width};
}

UncertaintySet max_uncertainty_set(const ContextSpace& space) {
  return {space.midpoint(), space.half_range()};
}

TaskSuite make_task_suite(const SetDistribution& dist, int n_train_sets, int contexts_per_set,
                          int n_test_sets, Rng& rng) {
  if (n_train_sets <= 0 || contexts_per_set <= 0 || n_test_sets <= 0) {
    throw std::invalid_argument("make_task_suite: counts must be positive");
  }
  TaskSuite suite;
  for (int i = 0; i < n_train_sets; ++i) {
    auto set = sample_set(dist, rng);
    std::vector<ContextVector> cs;
    for (int k = 0; k < contexts_per_set; ++k) cs.push_back(sample_context_uniform(set, rng));
    suite.train_sets.push_back(std::move(set));
    suite.train_contexts.push_back(std::move(cs));
  }
  const auto seen = suite.flat_train_contexts();
  while (static_cast<int>(suite.test_sets.size()) < n_test_sets) {
    auto set = sample_set(dist, rng);
    const bool reused = std::any_of(seen.begin(), seen.end(), [&](const auto& p) {
      return p.second == set.center;
    });
    if (!reused) suite.test_sets.push_back(std::move(set));
  }
  return suite;
}

nlohmann::json vec_to_json(const Vec& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vec vec_from_json(const nlohmann::json& j) {
  const auto xs = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

nlohmann::json to_json(const UncertaintySet& set) {
  return {{"mu", vec_to_json(set.center)}, {"sigma", vec_to_json(set.width)}};
}

UncertaintySet set_from_json(const nlohmann::json& j) {
  return {vec_from_json(j.at("mu")), vec_from_json(j.at("sigma"))};
}

nlohmann::json to_json(const TaskSuite& suite) {
  nlohmann::json train = nlohmann::json::array();
  for (std::size_t i = 0; i < suite.train_sets.size(); ++i) {
    auto entry = to_json(suite.train_sets[i]);
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : suite.train_contexts[i]) cs.push_back(vec_to_json(c));
    entry["contexts"] = cs;
    train.push_back(entry);
  }
  nlohmann::json test = nlohmann::json::array();
  for (const auto& s : suite.test_sets) test.push_back(to_json(s));
  return {{"suite_version", TaskSuite::kVersion}, {"train_sets", train}, {"test_sets", test}};
}

TaskSuite suite_from_json(const nlohmann::json& j) {
  const int version = j.at("suite_version").get<int>();
  if (version != TaskSuite::kVersion) {
    throw std::runtime_error("unsupported suite_version " + std::to_string(version));
  }
  TaskSuite suite;
  for (const auto& entry : j.at("train_sets")) {
    suite.train_sets.push_back(set_from_json(entry));
    std::vector<ContextVector> cs;
    for (const auto& c : entry.at("contexts")) cs.push_back(vec_from_json(c));
    suite.train_contexts.push_back(std::move(cs));
  }
  for (const auto& entry : j.at("test_sets")) suite.test_sets.push_back(set_from_json(entry));
  return suite;
}

}  // namespace sirsa
