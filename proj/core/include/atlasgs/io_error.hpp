// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>

namespace atlasgs {

/// Missing, unreadable or malformed input data. Messages name the file.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace atlasgs
