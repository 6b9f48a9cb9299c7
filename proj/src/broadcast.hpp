#pragma once

#include <vector>

#include "duoformer/tensor.hpp"

namespace duo::detail {

// Offset into `operand` for every element of the broadcast shape `out`, in
// row-major order. `operand` is right-aligned against `out`.
inline std::vector<Index> operand_offsets(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - operand.size();
  Shape strides(rank, 0);
  const Shape own = strides_of(operand);
  for (std::size_t i = 0; i < operand.size(); ++i) {
    strides[lead + i] = operand[i] == 1 ? 0 : own[i];
  }
  const Index total = numel(out);
  std::vector<Index> offsets(static_cast<std::size_t>(total));
  Shape counter(rank, 0);
  Index offset = 0;
  for (Index n = 0; n < total; ++n) {
    offsets[static_cast<std::size_t>(n)] = offset;
    for (int axis = static_cast<int>(rank) - 1; axis >= 0; --axis) {
      if (++counter[axis] < out[axis]) {
        offset += strides[axis];
        break;
      }
      offset -= strides[axis] * (out[axis] - 1);
      counter[axis] = 0;
    }
  }
  return offsets;
}

}  // namespace duo::detail
