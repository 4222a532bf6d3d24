#pragma once

// Helper for tests that drive the installed CLI binary. The path comes from
// the TAGASC_CLI environment variable (set by CTest).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace cli {

inline std::string binary_path() {
    const char* p = std::getenv("TAGASC_CLI");
    if (!p || !*p) throw std::runtime_error("TAGASC_CLI is not set (run through ctest)");
    return p;
}

struct Result {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

inline Result run(const std::string& args) {
    static int counter = 0;
    const auto capture = std::filesystem::temp_directory_path() /
                         ("tagasc_cli_out_" + std::to_string(::getpid()) + "_" +
                          std::to_string(counter++) + ".txt");
    const std::string cmd = binary_path() + " " + args + " > " + capture.string() + " 2>&1";
    const int status = std::system(cmd.c_str());

    Result r;
    if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    std::ifstream in(capture);
    r.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    std::error_code ec;
    std::filesystem::remove(capture, ec);
    return r;
}

inline std::string last_line(const std::string& text) {
    auto end = text.find_last_not_of('\n');
    if (end == std::string::npos) return "";
    auto start = text.rfind('\n', end);
    return text.substr(start == std::string::npos ? 0 : start + 1,
                       end - (start == std::string::npos ? 0 : start + 1) + 1);
}

}  // namespace cli
