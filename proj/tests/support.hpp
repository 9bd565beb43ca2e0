#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace anno::test {

inline std::string fixture_path(const std::string& relative) { return std::string(ANNO_FIXTURE_DIR) + "/" + relative; }

inline std::string read_fixture(const std::string& relative) {
    std::ifstream in(fixture_path(relative), std::ios::binary);
    if (!in) throw std::runtime_error("missing fixture " + relative);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline nlohmann::json fixture_json(const std::string& relative) { return nlohmann::json::parse(read_fixture(relative)); }

}  // namespace anno::test
