#pragma once

#include <stdexcept>
#include <string>

namespace mbic {

// Invalid tensor/weight shapes, indivisible extents, channel-budget mismatches.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// File system and image format failures.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Weight container failures. Each kind maps to a distinct message prefix so
// callers (and the CLI) can tell them apart.
class WeightError : public std::runtime_error {
public:
    enum class Kind { Checksum, Version, MissingParam, UnknownParam, Format, Mismatch };

    WeightError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Bitstream container / range decoder failures (truncation, bad magic, version).
class BitstreamError : public std::runtime_error {
public:
    explicit BitstreamError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mbic
