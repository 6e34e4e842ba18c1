#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>

#include "mscn/core/error.hpp"

namespace mscn {

struct ScheduleConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  double warmup_epochs = 2.0;
  double base_lr = 0.15;
  // Final learning rate as a fraction of base_lr.
  double min_lr = 0.0;

  void validate() const {
    require<ConfigError>(batch_size >= 2, "schedule.batch_size must be >= 2");
    require<ConfigError>(epochs >= 1, "schedule.epochs must be >= 1");
    require<ConfigError>(warmup_epochs >= 0 && warmup_epochs < static_cast<double>(epochs),
                         "schedule.warmup_epochs must lie in [0, epochs), got ", warmup_epochs);
    require<ConfigError>(base_lr > 0, "schedule.base_lr must be > 0");
    require<ConfigError>(min_lr >= 0 && min_lr <= 1, "schedule.min_lr must lie in [0,1]");
  }
};

/// Linear warmup from 0 to base_lr, then half-cosine down to min_lr * base_lr,
/// reached exactly at the last step (total_steps - 1).
inline double cosine_warmup_lr(const ScheduleConfig& s, std::size_t step,
                               std::size_t steps_per_epoch) {
  require<ConfigError>(steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
  const double warmup = s.warmup_epochs * static_cast<double>(steps_per_epoch);
  const double last = static_cast<double>(s.epochs * steps_per_epoch - 1);
  const auto t = static_cast<double>(step);
  if (t < warmup) return s.base_lr * t / warmup;
  if (last <= warmup) return s.base_lr;
  const double progress = std::min(1.0, (t - warmup) / (last - warmup));
  if (progress == 0.0) return s.base_lr;
  const double floor = s.min_lr * s.base_lr;
  if (progress == 1.0) return floor;
  return floor + (s.base_lr - floor) * (std::cos(std::numbers::pi * progress) + 1.0) / 2.0;
}

}  // namespace mscn
