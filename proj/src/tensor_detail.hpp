#pragma once

#include <cstddef>
#include <vector>

#include "ramoe/tensor.hpp"

namespace ramoe::detail {

// Every op funnels through here: builds the node, records the op when grad
// mode is on and an input requires grad, and rejects non-finite values.
Tensor make_node(const char* name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward);

void check_finite(const char* name, const std::vector<double>& values);

// numpy alignment: ranks padded on the left, axes must match or be 1.
Shape broadcast_shape(const char* opname, const Shape& a, const Shape& b);

// Strides into `in` for each axis of `out` (0 where `in` is broadcast).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out);

std::vector<std::size_t> row_major_strides(const Shape& s);

std::uint32_t next_generation();

}  // namespace ramoe::detail
