#pragma once

#include <Eigen/Core>

#include "isc/core_math.hpp"

namespace isc::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColVec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

inline Eigen::Map<RowMat> view(Matrix& m) {
    return {m.values().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

inline Eigen::Map<const RowMat> view(const Matrix& m) {
    return {m.values().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

/// A column-vector tensor (n x 1) seen as a row vector for broadcasting over batch rows.
inline Eigen::Map<const RowVec> row_view(const Matrix& m) {
    return {m.values().data(), static_cast<Eigen::Index>(m.size())};
}

inline Eigen::Map<RowVec> row_view(Matrix& m) {
    return {m.values().data(), static_cast<Eigen::Index>(m.size())};
}

}  // namespace isc::detail
