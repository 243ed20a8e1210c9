#pragma once

#include <Eigen/Dense>

namespace yyf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace yyf
