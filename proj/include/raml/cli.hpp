#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace raml::cli {

// Entry point behind the executable. Exit codes: 0 success, 1 data/validation
// failure, 2 usage, 3 backend/transport.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace raml::cli
