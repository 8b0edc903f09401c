#include "sirsa/replay.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace sirsa {

namespace {

void mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

void mix(std::uint64_t& h, const Vec& v) { mix(h, context_hash(v)); }

}  // namespace

std::uint64_t StoredTransition::compute_tag() const {
  std::uint64_t h = 0;
  mix(h, context_id);
  mix(h, set_id);
  mix(h, context);
  mix(h, episode_id);
  mix(h, static_cast<std::uint64_t>(step));
  mix(h, xi.center);
  mix(h, xi.width);
  mix(h, xi_next.center);
  mix(h, xi_next.width);
  return h;
}

ReplayBuffers::ReplayBuffers(std::size_t capacity_per_context) : capacity_(capacity_per_context) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffers: capacity must be positive");
}

void ReplayBuffers::add_episode(std::vector<StoredTransition> episode) {
  for (auto& tr : episode) {
    tr.tag = tr.compute_tag();
    auto& buf = buffers_[tr.context_id];
    auto& ctxs = contexts_of_set_[tr.set_id];
    if (std::find(ctxs.begin(), ctxs.end(), tr.context_id) == ctxs.end()) ctxs.push_back(tr.context_id);
    buf.push_back(std::move(tr));
    ++total_;
    if (buf.size() > capacity_) {
      buf.pop_front();
      --total_;
    }
  }
}

std::size_t ReplayBuffers::size_of_set(std::size_t set_id) const {
  const auto it = contexts_of_set_.find(set_id);
  if (it == contexts_of_set_.end()) return 0;
  std::size_t n = 0;
  for (auto c : it->second) n += buffers_.at(c).size();
  return n;
}

std::vector<std::size_t> ReplayBuffers::sets_with_data() const {
  std::vector<std::size_t> out;
  for (const auto& [set, ctxs] : contexts_of_set_) {
    if (size_of_set(set) > 0) out.push_back(set);
  }
  return out;
}

const StoredTransition& ReplayBuffers::at(std::size_t i) const {
  for (const auto& [id, buf] : buffers_) {
    if (i < buf.size()) return buf[i];
    i -= buf.size();
  }
  throw std::out_of_range("ReplayBuffers::at");
}

std::vector<const StoredTransition*> ReplayBuffers::sample(std::size_t n, Rng& rng) const {
  if (total_ == 0) throw std::runtime_error("ReplayBuffers::sample: empty buffers");
  std::uniform_int_distribution<std::size_t> pick(0, total_ - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  // Resolve indices with one sweep over the buffers.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return idx[a] < idx[b]; });
  std::vector<const StoredTransition*> out(n, nullptr);
  auto it = buffers_.begin();
  std::size_t base = 0;
  for (auto o : order) {
    while (idx[o] >= base + it->second.size()) {
      base += it->second.size();
      ++it;
    }
    out[o] = &it->second[idx[o] - base];
  }
  return out;
}

std::vector<const StoredTransition*> ReplayBuffers::sample_from_set(std::size_t set_id,
                                                                    std::size_t n, Rng& rng) const {
  const std::size_t total = size_of_set(set_id);
  if (total == 0) throw std::runtime_error("ReplayBuffers::sample_from_set: no data for set");
  const auto& ctxs = contexts_of_set_.at(set_id);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<const StoredTransition*> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t i = pick(rng);
    for (auto c : ctxs) {
      const auto& buf = buffers_.at(c);
      if (i < buf.size()) {
        out.push_back(&buf[i]);
        break;
      }
      i -= buf.size();
    }
  }
  return out;
}

std::vector<const StoredTransition*> lowest_return_subset(
    const std::vector<const StoredTransition*>& drawn, std::size_t keep) {
  std::vector<std::size_t> order(drawn.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (drawn[a]->episode_return != drawn[b]->episode_return) {
      return drawn[a]->episode_return < drawn[b]->episode_return;
    }
    return drawn[a]->episode_id < drawn[b]->episode_id;
  });
  keep = std::min(keep, drawn.size());
  std::vector<const StoredTransition*> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(drawn[order[i]]);
  return out;
}

namespace {

std::size_t draw_count(std::size_t batch_size, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("EPOpt alpha must lie in (0, 1]");
  return static_cast<std::size_t>(std::ceil(static_cast<double>(batch_size) / alpha - 1e-9));
}

}  // namespace

std::vector<const StoredTransition*> epopt_filter_batch(const ReplayBuffers& buffers,
                                                        std::size_t batch_size, double alpha,
                                                        Rng& rng) {
  const std::size_t m = draw_count(batch_size, alpha);
  if (buffers.size() < m) return buffers.sample(batch_size, rng);
  return lowest_return_subset(buffers.sample(m, rng), batch_size);
}

std::vector<const StoredTransition*> epopt_filter_batch_per_set(const ReplayBuffers& buffers,
                                                                std::size_t batch_size,
                                                                double alpha, Rng& rng) {
  const std::size_t m = draw_count(batch_size, alpha);
  const auto sets = buffers.sets_with_data();
  if (sets.empty()) throw std::runtime_error("epopt_filter_batch_per_set: empty buffers");
  std::uniform_int_distribution<std::size_t> pick(0, sets.size() - 1);
  const std::size_t set = sets[pick(rng)];
  if (buffers.size_of_set(set) < m) return buffers.sample(batch_size, rng);
  return lowest_return_subset(buffers.sample_from_set(set, m, rng), batch_size);
}

}  // namespace sirsa
