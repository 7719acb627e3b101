#pragma once

#include <string>
#include <vector>

#include "diffplan/config.hpp"
#include "diffplan/dataset.hpp"
#include "diffplan/denoiser.hpp"
#include "diffplan/tasks.hpp"

namespace diffplan {

struct PretrainResult {
  Checkpoint checkpoint;
  double initial_loss = 0;   // smoothed loss over the first log window
  double final_loss = 0;     // smoothed loss over the last log window
};

// Stage-1 training loop: optimize the denoising objective over the mixed
// multi-task dataset and checkpoint the foundation planner. Writes the
// checkpoint to ckpt_path (every 10% of the step budget, overwriting) and
// appends loss rows to metrics_path.
PretrainResult pretrain(const Config& cfg, const Dataset& dataset,
                        const std::vector<TaskSpec>& suite,
                        const std::string& ckpt_path,
                        const std::string& metrics_path, uint64_t seed);

}  // namespace diffplan
