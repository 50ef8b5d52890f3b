#pragma once

#include <iosfwd>
#include <string>

#include "strack/tensor.hpp"

namespace strack {

// Binary tensor container used for checkpoints and test fixtures:
// magic "SPT0", u32 LE ndim, ndim×u32 LE dims, u8 dtype (0=f32, 1=f64),
// raw little-endian payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace strack
