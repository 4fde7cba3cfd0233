#pragma once

#include <torch/torch.h>

#include "lfr/image.hpp"

namespace lfr {

// 1 x H x W float tensor (copy).
torch::Tensor to_tensor(const Plane& plane);
// 4 x H x W float tensor in R, F, O, S order (copy).
torch::Tensor to_tensor(const MapStack& stack);

// From an H x W (or 1 x H x W) tensor.
Plane plane_from_tensor(const torch::Tensor& t);
// From a 4 x H x W tensor.
MapStack stack_from_tensor(const torch::Tensor& t);

}  // namespace lfr
