#pragma once

#include <string>
#include <vector>

#include "whiten/linalg.hpp"
#include "whiten/nn.hpp"

namespace whiten {

struct NamedTensor {
  std::string name;
  std::vector<Index> shape;
  std::vector<double> data;
};

/// Versioned tensor container: a text manifest (tensor names, shapes, meta
/// key/value pairs such as layer spec strings) followed by the raw payload
/// as little-endian 64-bit floats in manifest order.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of every learnable tensor plus each whitening layer's running
/// covariance, with the layer specs recorded in the manifest.
Checkpoint net_checkpoint(Net& net);

/// Restores a snapshot into a structurally identical net.
void net_restore(Net& net, const Checkpoint& ck);

}  // namespace whiten
