#pragma once

#include <string>

namespace liparch {

enum class Activation { relu, tanh_fn, sigmoid, identity };

struct ActivationSpec {
  Activation name = Activation::relu;
  double lipschitz_constant = 1.0;  // a valid bound for all four, tight except sigmoid (1/4)
  bool zero_at_zero = true;         // false for sigmoid; matters for image-radius bounds
};

ActivationSpec activation_spec(Activation a);
double apply_activation(Activation a, double x);

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);  // throws ValidationError

}  // namespace liparch
