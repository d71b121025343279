// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kvslim {

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Raised when a requested object would exceed a configured size limit.
class CapacityError : public std::length_error {
  public:
    CapacityError(const std::string& what, std::size_t required, std::size_t cap)
        : std::length_error(what), required_(required), cap_(cap) {}

    std::size_t required() const noexcept { return required_; }
    std::size_t cap() const noexcept { return cap_; }

  private:
    std::size_t required_;
    std::size_t cap_;
};

/// Malformed cache file. `offset` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
  public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

/// The balancer put every item on one side; halving made no progress.
class NoProgress : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Running key sum left its per-step allowance during compression.
class CenteringDriftError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class CodeNotFound : public std::runtime_error {
  public:
    CodeNotFound(const std::string& what, double best_eta) : std::runtime_error(what), best_eta_(best_eta) {}

    double best_eta() const noexcept { return best_eta_; }

  private:
    double best_eta_;
};

}  // namespace kvslim
