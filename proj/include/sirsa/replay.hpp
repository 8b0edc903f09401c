#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include "sirsa/pointmass.hpp"
#include "sirsa/rcmdp.hpp"

namespace sirsa {

/// A transition plus the bookkeeping tags every learner needs.
struct StoredTransition {
  Vec s;
  Vec a;
  double reward = 0.0;
  Vec s_next;
  bool done = false;

  std::size_t context_id = 0;  // index into the suite's flat context list
  std::size_t set_id = 0;      // training set the episode was drawn from
  ContextVector context;       // true context (observed at training time)
  std::uint64_t episode_id = 0;
  int step = 0;
  double episode_return = 0.0;
  UncertaintySet xi;       // set the action was conditioned on
  UncertaintySet xi_next;  // set after filtering this transition
  Vec history;             // system-ID features of the window ending here
  double wcpg_alpha = 1.0; // risk level the behaviour policy used (WCPG)
  std::uint64_t tag = 0;   // hash over (context, xi, episode, step)

  [[nodiscard]] std::uint64_t compute_tag() const;
  [[nodiscard]] bool tag_ok() const { return tag == compute_tag(); }
};

/// D[c]: one bounded FIFO buffer per training context.
class ReplayBuffers {
 public:
  explicit ReplayBuffers(std::size_t capacity_per_context = 100000);

  /// Appends a whole episode to the buffer of its context (tags are sealed here).
  void add_episode(std::vector<StoredTransition> episode);

  [[nodiscard]] std::size_t size() const { return total_; }
  [[nodiscard]] std::size_t capacity_per_context() const { return capacity_; }
  [[nodiscard]] const std::map<std::size_t, std::deque<StoredTransition>>& buffers() const {
    return buffers_;
  }
  [[nodiscard]] std::size_t size_of_set(std::size_t set_id) const;
  [[nodiscard]] std::vector<std::size_t> sets_with_data() const;

  /// i-th transition of the union in (context id, age) order.
  [[nodiscard]] const StoredTransition& at(std::size_t i) const;
  /// Uniform draws with replacement over the union (or one set when set_id given).
  [[nodiscard]] std::vector<const StoredTransition*> sample(std::size_t n, Rng& rng) const;
  [[nodiscard]] std::vector<const StoredTransition*> sample_from_set(std::size_t set_id,
                                                                     std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t total_ = 0;
  std::map<std::size_t, std::deque<StoredTransition>> buffers_;
  std::map<std::size_t, std::vector<std::size_t>> contexts_of_set_;
};

/// EPOpt batch: draw ceil(D / alpha) tuples uniformly, keep the D whose
/// episodes had the lowest return (ties by episode id, then draw order).
/// Falls back to a plain uniform batch while the buffers hold fewer than
/// ceil(D / alpha) transitions.
std::vector<const StoredTransition*> epopt_filter_batch(const ReplayBuffers& buffers,
                                                        std::size_t batch_size, double alpha,
                                                        Rng& rng);

/// Same, but the draw comes from the buffers of a single training set picked
/// uniformly among those holding data (multi-set variant).
std::vector<const StoredTransition*> epopt_filter_batch_per_set(const ReplayBuffers& buffers,
                                                                std::size_t batch_size,
                                                                double alpha, Rng& rng);

/// The lowest-return selection applied to an already drawn candidate list.
std::vector<const StoredTransition*> lowest_return_subset(
    const std::vector<const StoredTransition*>& drawn, std::size_t keep);

}  // namespace sirsa
