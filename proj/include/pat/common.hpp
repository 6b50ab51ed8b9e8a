#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pat {

/// Base of every error thrown by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents; throws Error if unreadable.
std::string sha256_file(const std::string& path);

/// Stable 64-bit seed derived from a list of string parts.
std::uint64_t derive_seed(std::initializer_list<std::string_view> parts);

/// Reads a whole file; throws Error if unreadable.
std::string read_file(const std::string& path);

/// Writes bytes, creating parent directories.
void write_file(const std::string& path, std::string_view bytes);

}  // namespace pat
