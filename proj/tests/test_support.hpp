#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "segbench/process.hpp"

namespace testing_support {

/// Fresh temporary directory removed when the object goes out of scope.
using ScratchDir = segbench::TempDir;

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

}  // namespace testing_support
