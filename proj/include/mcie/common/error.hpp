#pragma once

#include <stdexcept>
#include <string>

namespace mcie {

// Error taxonomy shared by every module. The CLI maps kinds to exit codes
// (usage=2, data/contract=3, numeric=4, transport=5).
enum class ErrorKind {
    Usage,
    Data,
    Contract,
    Numeric,
    Transport,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    const char* kind_name() const {
        switch (kind_) {
            case ErrorKind::Usage: return "usage";
            case ErrorKind::Data: return "data";
            case ErrorKind::Contract: return "contract";
            case ErrorKind::Numeric: return "numeric";
            case ErrorKind::Transport: return "transport";
        }
        return "unknown";
    }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::Usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::Data, msg); }
inline Error contract_error(const std::string& msg) { return Error(ErrorKind::Contract, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::Numeric, msg); }
inline Error transport_error(const std::string& msg) { return Error(ErrorKind::Transport, msg); }

}  // namespace mcie
