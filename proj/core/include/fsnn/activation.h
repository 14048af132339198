#pragma once

#include <cmath>
#include <string>

#include "fsnn/error.h"

namespace fsnn {

enum class ActivationKind {
  kIdentity,
  kRelu,
  kSilu,
  kSigmoid,
};

inline double eval_activation(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::kIdentity:
      return x;
    case ActivationKind::kRelu:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::kSilu:
      return x / (1.0 + std::exp(-x));
    case ActivationKind::kSigmoid:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return x;  // unreachable
}

inline const char* activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kIdentity:
      return "identity";
    case ActivationKind::kRelu:
      return "relu";
    case ActivationKind::kSilu:
      return "silu";
    case ActivationKind::kSigmoid:
      return "sigmoid";
  }
  return "identity";  // unreachable
}

inline ActivationKind parse_activation(const std::string& name) {
  if (name == "identity") return ActivationKind::kIdentity;
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "silu") return ActivationKind::kSilu;
  if (name == "sigmoid") return ActivationKind::kSigmoid;
  throw ValidationError("unknown activation \"" + name +
                        "\"; supported kinds: identity, relu, silu, sigmoid");
}

}  // namespace fsnn
