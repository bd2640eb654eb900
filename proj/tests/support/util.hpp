#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "oodperm/latent_io.hpp"
#include "oodperm/matrix.hpp"
#include "oracles.hpp"

namespace testutil {

inline oodperm::Matrix to_matrix(const oracle::Rows& rows) {
    oodperm::Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(i, j) = rows[i][j];
        }
    }
    return m;
}

inline std::vector<std::string> column_names(const oodperm::LatentResponseSet& set) {
    std::vector<std::string> out;
    for (const auto& c : set.columns()) {
        out.push_back(c.name);
    }
    return out;
}

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(OODPERM_FIXTURE_DIR) / name;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("oodperm-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
