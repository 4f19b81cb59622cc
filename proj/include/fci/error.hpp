#pragma once

#include <stdexcept>
#include <string>

namespace fci {

// Broad failure categories. The C API maps these one-to-one onto status codes.
enum class ErrorKind {
  InvalidArgument,
  Config,
  Io,
  Data,
  Runtime,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error invalid_argument(const std::string& what) { return {ErrorKind::InvalidArgument, what}; }
inline Error config_error(const std::string& what) { return {ErrorKind::Config, what}; }
inline Error io_error(const std::string& what) { return {ErrorKind::Io, what}; }
inline Error data_error(const std::string& what) { return {ErrorKind::Data, what}; }
inline Error runtime_error(const std::string& what) { return {ErrorKind::Runtime, what}; }

}  // namespace fci
