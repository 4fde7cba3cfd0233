#include "lfr/convert.hpp"

#include <algorithm>

#include "lfr/errors.hpp"

namespace lfr {

torch::Tensor to_tensor(const Plane& plane) {
  auto t = torch::empty({1, plane.height(), plane.width()}, torch::kFloat32);
  std::copy(plane.values().begin(), plane.values().end(), t.data_ptr<float>());
  return t;
}

torch::Tensor to_tensor(const MapStack& stack) {
  std::vector<torch::Tensor> channels;
  for (const auto& c : stack.channels) channels.push_back(to_tensor(c));
  return torch::cat(channels, 0);
}

Plane plane_from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (c.dim() == 3 && c.size(0) == 1) c = c[0];
  if (c.dim() != 2) throw ShapeError("expected an H x W tensor");
  Plane p(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::copy(c.data_ptr<float>(), c.data_ptr<float>() + c.numel(), p.values().begin());
  return p;
}

MapStack stack_from_tensor(const torch::Tensor& t) {
  if (t.dim() != 3 || t.size(0) != kMapChannels) throw ShapeError("expected a 4 x H x W tensor");
  MapStack s;
  for (int c = 0; c < kMapChannels; ++c) s.channels[static_cast<std::size_t>(c)] = plane_from_tensor(t[c]);
  return s;
}

}  // namespace lfr
