// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace locas::cli {

// Exit status: 0 success, 1 runtime error (diagnostic names the error
// category), 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace locas::cli
