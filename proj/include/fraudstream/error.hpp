#pragma once

#include <stdexcept>
#include <string>

namespace fraudstream {

enum class ErrorCode {
    invalid_argument,
    duplicate_topic,
    unknown_topic,
    invalid_partition,
    schema_mismatch,
    data_error,
    config_error,
    io_error,
    fraud_starvation,
    degenerate,
    queue_overflow,
    label_leak,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "INVALID_ARGUMENT";
        case ErrorCode::duplicate_topic: return "DUPLICATE_TOPIC";
        case ErrorCode::unknown_topic: return "UNKNOWN_TOPIC";
        case ErrorCode::invalid_partition: return "INVALID_PARTITION";
        case ErrorCode::schema_mismatch: return "SCHEMA_MISMATCH";
        case ErrorCode::data_error: return "DATA_ERROR";
        case ErrorCode::config_error: return "CONFIG_ERROR";
        case ErrorCode::io_error: return "IO_ERROR";
        case ErrorCode::fraud_starvation: return "FRAUD_STARVATION";
        case ErrorCode::degenerate: return "DEGENERATE";
        case ErrorCode::queue_overflow: return "QUEUE_OVERFLOW";
        case ErrorCode::label_leak: return "LABEL_LEAK";
    }
    return "UNKNOWN";
}

// Every failure raised by the library carries one of the codes above so the
// CLI can map it to an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace fraudstream
