#pragma once

#include <string>
#include <vector>

namespace calign {

/// The set of observed modality slots for one instance, out of `k` slots.
class ObservationMask {
 public:
  ObservationMask() = default;

  /// Throws InvalidMask if `observed` is empty, has duplicates, or indexes
  /// outside [0, k).
  ObservationMask(int k, std::vector<int> observed);

  static ObservationMask full(int k);
  static ObservationMask from_flags(const std::vector<bool>& flags);

  int slots() const { return k_; }
  const std::vector<int>& observed() const { return observed_; }
  std::vector<int> missing() const;
  std::vector<bool> flags() const;

  bool contains(int slot) const;
  bool is_full() const { return static_cast<int>(observed_.size()) == k_; }
  int observed_count() const { return static_cast<int>(observed_.size()); }
  int missing_count() const { return k_ - observed_count(); }

  std::string to_string() const;

  friend bool operator==(const ObservationMask&, const ObservationMask&) = default;

 private:
  int k_ = 0;
  std::vector<int> observed_;
};

}  // namespace calign
