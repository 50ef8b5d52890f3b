#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace strack {

// Error taxonomy. Shape/contract/domain errors indicate caller bugs;
// config/parse/io errors surface to the CLI as exit code 2 / 1.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

// Worker threads used by the heavy kernels. Results are bit-stable for a
// fixed thread count; kernels partition outputs disjointly so there are no
// cross-thread reductions on the hot paths.
int thread_count();
void set_thread_count(int n);

// Runs fn(begin, end) over disjoint chunks of [0, n). Serial when n is small
// or a single thread is configured.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

inline constexpr const char* kVersionString = "strack 0.1.0";

}  // namespace strack
