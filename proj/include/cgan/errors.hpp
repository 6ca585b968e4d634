// SPDX-License-Identifier: Apache-2.0
/**
 * @file   errors.hpp
 * @brief  Exception types thrown across the library.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace cgan {

/// Extents of two operands disagree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A value lies outside the domain an operation accepts (e.g. alpha > 1).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Operation does not fit the model variant or configuration at hand.
struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A loss term or gradient stopped being finite during training.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace cgan
