#pragma once

// JSONL event trace. Every line is a JSON object with sorted keys, a line
// number "i", and a rolling checksum "lc" = H(prev_checksum || line-without-lc).
// The chain makes offline tampering visible: flip a byte anywhere and every
// later checksum stops matching; drop the tail and the terminator is gone.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pose/crypto.hpp"

namespace pose {

using Json = nlohmann::json;

struct MalformedTrace : std::runtime_error {
    explicit MalformedTrace(const std::string& what) : std::runtime_error(what) {}
};

class TraceWriter {
  public:
    // Takes the line's payload, stamps "i" and "lc", and appends it.
    void emit(std::string kind, Json fields = Json::object()) {
        fields["kind"] = std::move(kind);
        fields["i"] = next_i_++;
        std::string body = fields.dump();
        Hasher h;
        h.update(std::span<const uint8_t>(last_.data(), last_.size()));
        h.update(body);
        last_ = h.finish();
        fields["lc"] = hex(last_);
        text_ += fields.dump();
        text_ += '\n';
    }

    const std::string& text() const { return text_; }
    uint64_t lines() const { return next_i_; }

  private:
    Digest last_{};  // zero digest before the first line
    uint64_t next_i_ = 0;
    std::string text_;
};

// Parses a full trace. Unparseable lines, an empty file, or a missing
// terminator line all mean the file is not a complete trace.
inline std::vector<Json> load_trace(const std::string& text) {
    std::vector<Json> lines;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) throw MalformedTrace("last line is not terminated");
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw MalformedTrace(std::string("line ") + std::to_string(lines.size()) +
                                 " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw MalformedTrace("trace line is not an object");
        lines.push_back(std::move(j));
    }
    if (lines.empty()) throw MalformedTrace("empty trace");
    if (lines.front().value("kind", std::string()) != "scenario")
        throw MalformedTrace("trace does not start with a scenario line");
    if (lines.back().value("kind", std::string()) != "end")
        throw MalformedTrace("trace has no end line: truncated");
    return lines;
}

// Recomputes the checksum chain. Returns the first mismatch, if any.
inline std::optional<std::string> verify_trace_chain(const std::vector<Json>& lines) {
    Digest last{};
    for (size_t n = 0; n < lines.size(); n++) {
        Json j = lines[n];
        if (!j.count("lc") || !j["lc"].is_string())
            return "line " + std::to_string(n) + " has no checksum";
        if (!j.count("i") || !j["i"].is_number_unsigned() || j["i"].get<uint64_t>() != n)
            return "line " + std::to_string(n) + " is out of sequence";
        std::string claimed = j["lc"].get<std::string>();
        j.erase("lc");
        std::string body = j.dump();
        Hasher h;
        h.update(std::span<const uint8_t>(last.data(), last.size()));
        h.update(body);
        last = h.finish();
        if (hex(last) != claimed)
            return "checksum mismatch at line " + std::to_string(n);
    }
    return std::nullopt;
}

}  // namespace pose
