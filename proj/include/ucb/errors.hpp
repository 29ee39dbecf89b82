#pragma once

#include <stdexcept>
#include <string>

namespace ucb {

/// Shapes of two arrays that must agree do not.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An object was queried before it reached the state the query needs.
class InvalidState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A forward trace was replayed against parameters that changed since it was recorded.
class StalenessError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Bad magic number or unsupported version in a binary file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Truncated or checksum-failing payload.
class CorruptionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two files that must describe the same examples disagree on the count.
class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int task_id, int epoch)
        : std::runtime_error("non-finite loss in task " + std::to_string(task_id) + " at epoch " +
                             std::to_string(epoch)),
          task_id_(task_id),
          epoch_(epoch) {}

    int task_id() const noexcept { return task_id_; }
    int epoch() const noexcept { return epoch_; }

private:
    int task_id_;
    int epoch_;
};

/// Malformed experiment configuration; carries the offending key.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace ucb
