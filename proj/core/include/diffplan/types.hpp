#pragma once

#include <Eigen/Dense>

namespace diffplan {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ActionSequence: H x A matrix of planned actions, row h = action at offset h.
// Entries land in [-1, 1] only at the data level, after final clamping.
using ActionSequence = Mat;

// StateHistory: T_o x S matrix of recent states, most recent state last.
using StateHistory = Mat;

}  // namespace diffplan
