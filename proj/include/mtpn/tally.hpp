#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace mtpn {

/// Arithmetic cost convention shared by the instrumented operators and the
/// analytic cost model. MACs are only counted for convolutions; every other
/// operator contributes FLOPs at a fixed per-element rate.
namespace cost {
inline constexpr std::uint64_t flops_per_mac = 2;
inline constexpr std::uint64_t batchnorm = 2;  // one multiply, one add
inline constexpr std::uint64_t relu = 1;
inline constexpr std::uint64_t relu6 = 1;
inline constexpr std::uint64_t sigmoid = 4;
inline constexpr std::uint64_t softmax = 5;
inline constexpr std::uint64_t add = 1;
inline constexpr std::uint64_t bilinear = 8;
inline constexpr std::uint64_t concat = 0;
// Weighted fusion of m inputs: m multiplies plus (m - 1) adds per output element.
// Pooling: k*k per output element; global average pooling uses k*k = h*w.
}  // namespace cost

struct OpRecord {
  std::string label;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;

  friend bool operator==(const OpRecord&, const OpRecord&) = default;
};

/// Arithmetic work accumulated while instrumentation is active.
struct OpTally {
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::vector<OpRecord> per_op;

  void add(std::string_view label, std::uint64_t op_macs, std::uint64_t op_flops) {
    macs += op_macs;
    flops += op_flops;
    per_op.push_back({std::string(label), op_macs, op_flops});
  }

  void append(const OpTally& other) {
    macs += other.macs;
    flops += other.flops;
    per_op.insert(per_op.end(), other.per_op.begin(), other.per_op.end());
  }

  friend bool operator==(const OpTally&, const OpTally&) = default;
};

namespace detail {
inline thread_local std::vector<OpTally*> active_tallies;

class TallyGuard {
 public:
  explicit TallyGuard(OpTally& t) { active_tallies.push_back(&t); }
  ~TallyGuard() {
    OpTally* self = active_tallies.back();
    active_tallies.pop_back();
    if (!active_tallies.empty()) active_tallies.back()->append(*self);
  }
  TallyGuard(const TallyGuard&) = delete;
  TallyGuard& operator=(const TallyGuard&) = delete;
};
}  // namespace detail

inline bool tally_active() noexcept { return !detail::active_tallies.empty(); }

/// Called by operators; a no-op unless a tally_scope is open on this thread.
inline void record_op(std::string_view label, std::uint64_t macs, std::uint64_t flops) {
  if (!detail::active_tallies.empty()) detail::active_tallies.back()->add(label, macs, flops);
}

/// Runs f with instrumentation on and returns (result, tally). Nested scopes
/// append their records to the enclosing scope when they close.
template <class F>
auto tally_scope(F&& f) {
  OpTally tally;
  if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
    {
      detail::TallyGuard guard(tally);
      std::forward<F>(f)();
    }
    return tally;
  } else {
    using R = std::invoke_result_t<F>;
    std::pair<R, OpTally> out;
    {
      detail::TallyGuard guard(tally);
      out.first = std::forward<F>(f)();
    }
    out.second = std::move(tally);
    return out;
  }
}

}  // namespace mtpn
