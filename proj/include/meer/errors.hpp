#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace meer {

// Tensor shapes that do not fit the network contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Missing or unreadable files, malformed manifests/pairs/checkpoints.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A training loss became non-finite. Carries the dataset record indices of the offending batch.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::vector<long> batch_records)
        : std::runtime_error(what), batch_records_(std::move(batch_records)) {}

    const std::vector<long>& batch_records() const noexcept { return batch_records_; }

private:
    std::vector<long> batch_records_;
};

}  // namespace meer
