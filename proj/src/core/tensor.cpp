#include "tensor.hpp"

#include <unordered_map>

namespace add::detail {

namespace {

struct PoolState {
  // size -> stack of spare buffers of exactly that capacity
  std::unordered_map<size_t, std::vector<std::vector<real>>> spare;
  size_t held_bytes = 0;
  // Cap pooled memory so pathological workloads degrade to plain malloc
  // instead of hoarding.
  static constexpr size_t kMaxHeldBytes = size_t(1) << 31;  // 2 GiB
};

PoolState& pool() {
  thread_local PoolState s;
  return s;
}

}  // namespace

std::vector<real> BufferPool::acquire(size_t n, bool zeroed) {
  auto& st = pool();
  auto it = st.spare.find(n);
  if (it != st.spare.end() && !it->second.empty()) {
    std::vector<real> v = std::move(it->second.back());
    it->second.pop_back();
    st.held_bytes -= n * sizeof(real);
    if (zeroed) std::memset(v.data(), 0, n * sizeof(real));
    return v;
  }
  if (zeroed) return std::vector<real>(n, real(0));
  std::vector<real> v;
  v.resize(n);  // value-initialized anyway for vector<float>; cheap enough
  return v;
}

void BufferPool::release(std::vector<real>&& v) {
  auto& st = pool();
  size_t n = v.size();
  if (n == 0) return;
  if (st.held_bytes + n * sizeof(real) > PoolState::kMaxHeldBytes) return;  // drop on floor
  st.held_bytes += n * sizeof(real);
  st.spare[n].push_back(std::move(v));
}

}  // namespace add::detail
