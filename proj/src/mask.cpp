#include "calign/mask.hpp"

#include <algorithm>

#include "calign/error.hpp"

namespace calign {

ObservationMask::ObservationMask(int k, std::vector<int> observed)
    : k_(k), observed_(std::move(observed)) {
  if (k_ < 1) throw Error(ErrorKind::InvalidMask, "mask needs at least one slot");
  if (observed_.empty()) throw Error(ErrorKind::InvalidMask, "observation mask is empty");
  std::sort(observed_.begin(), observed_.end());
  if (std::adjacent_find(observed_.begin(), observed_.end()) != observed_.end())
    throw Error(ErrorKind::InvalidMask, "observation mask has duplicate slots");
  if (observed_.front() < 0 || observed_.back() >= k_)
    throw Error(ErrorKind::InvalidMask,
                "observation mask slot out of range [0, " + std::to_string(k_) + ")");
}

ObservationMask ObservationMask::full(int k) {
  std::vector<int> all(static_cast<std::size_t>(std::max(k, 0)));
  for (int i = 0; i < k; ++i) all[static_cast<std::size_t>(i)] = i;
  return ObservationMask(k, std::move(all));
}

ObservationMask ObservationMask::from_flags(const std::vector<bool>& flags) {
  std::vector<int> observed;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) observed.push_back(static_cast<int>(i));
  return ObservationMask(static_cast<int>(flags.size()), std::move(observed));
}

std::vector<int> ObservationMask::missing() const {
  std::vector<int> out;
  for (int i = 0; i < k_; ++i)
    if (!contains(i)) out.push_back(i);
  return out;
}

std::vector<bool> ObservationMask::flags() const {
  std::vector<bool> out(static_cast<std::size_t>(k_), false);
  for (int i : observed_) out[static_cast<std::size_t>(i)] = true;
  return out;
}

bool ObservationMask::contains(int slot) const {
  return std::binary_search(observed_.begin(), observed_.end(), slot);
}

std::string ObservationMask::to_string() const {
  std::string s = "{";
  for (std::size_t i = 0; i < observed_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(observed_[i]);
  }
  return s + "}";
}

}  // namespace calign
