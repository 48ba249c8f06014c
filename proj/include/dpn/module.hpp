#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dpn/autograd.hpp"

namespace dpn {

/// Anything that owns parameters. Names follow "<layer>.<role>".
class Module {
 public:
  virtual ~Module() = default;

  virtual void collect(std::vector<Parameter*>& out) = 0;
  /// Non-trainable state that a checkpoint must carry (e.g. running statistics).
  virtual void collect_buffers(std::vector<std::pair<std::string, Tensor*>>&) {}

  std::vector<Parameter*> parameters();
  std::size_t param_count();
};

}  // namespace dpn
