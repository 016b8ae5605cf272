#include "liparch/activation.hpp"

#include <cmath>

#include "liparch/errors.hpp"

namespace liparch {

ActivationSpec activation_spec(Activation a) {
  ActivationSpec s;
  s.name = a;
  s.lipschitz_constant = 1.0;
  s.zero_at_zero = (a != Activation::sigmoid);
  return s;
}

double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::tanh_fn:
      return std::tanh(x);
    case Activation::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::identity:
      return x;
  }
  return x;
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh_fn:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::identity:
      return "identity";
  }
  return "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh_fn;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation: " + s);
}

}  // namespace liparch
