#pragma once

#include <json.hpp>

#include "nesde/linalg.hpp"
#include "nesde/spectral.hpp"

// JSON helpers shared by dataset, checkpoint and config files.

namespace nesde {

using Json = nlohmann::json;

inline Json mat_to_json(const Mat& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Mat json_to_mat(const Json& j, int expect_cols = -1) {
    const int rows = static_cast<int>(j.size());
    int cols = expect_cols;
    if (rows > 0) cols = static_cast<int>(j.at(0).size());
    if (cols < 0) cols = 0;
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    return m;
}

inline Json vec_to_json(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vec json_to_vec(const Json& j) {
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
    return v;
}

Json dynamics_to_json(const SpectralDynamics& dyn);
SpectralDynamics dynamics_from_json(const Json& j);

}  // namespace nesde
