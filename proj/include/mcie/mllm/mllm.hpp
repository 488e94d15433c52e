#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcie/bench/bench.hpp"
#include "mcie/common/error.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/io/image.hpp"

namespace mcie::mllm {

enum class Transport { Live, Mock, Replay };

const char* transport_name(Transport t);
Transport parse_transport(const std::string& name);

// Process-wide guard. While set, a LIVE call throws before touching the
// network, so a test profile that must stay offline fails loudly instead
// of silently reaching out.
void forbid_live(bool on);
bool live_forbidden();

struct MllmConfig {
    std::string endpoint;  // http://host[:port]/path
    std::string model;
    std::string api_key;  // sent as a bearer header, never serialized
    double timeout_s = 30.0;
    int retries = 0;  // extra attempts after a transport failure, at most 1
    Transport transport = Transport::Mock;
    std::string fixture_path;  // replay store
    std::string mock_reply;    // canned assistant content for mock
};

// Reads MCIE_MLLM_ENDPOINT, MCIE_MLLM_MODEL, MCIE_MLLM_API_KEY; unset
// variables leave the fields empty.
MllmConfig config_from_env();

// In-context prompt: a task guideline, one worked example, and the
// instance slot. render substitutes {instruction} in the instance part.
struct PromptTemplate {
    std::string guideline;
    std::string example;
    std::string instance;

    void validate() const;
    std::string render(const std::string& instruction) const;
};

PromptTemplate decompose_template();
PromptTemplate judge_template();
PromptTemplate conflict_template();

std::string base64(const unsigned char* bytes, std::size_t n);
inline std::string base64(const std::string& s) {
    return base64(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

// Nearest-neighbor downscale so max(h, w) <= max_side.
io::Image clamp_resolution(const io::Image& img, int max_side);

// data: URI carrying the (resolution-capped) image as a binary PPM.
std::string image_payload(const io::Image& img, int max_side = 512);

// Immutable after construction; call() is const and concurrent calls are
// fine. Every failure carries the raw reply body with the key redacted:
// timeouts and non-2xx statuses as transport errors, unparseable replies
// as data errors.
class MllmClient {
public:
    explicit MllmClient(MllmConfig cfg);

    const MllmConfig& config() const { return cfg_; }

    // Chat-completion request body. Keys are sorted on dump, so the bytes
    // are platform-stable; the api key never appears in it.
    nlohmann::json request_body(const std::string& prompt,
                                const std::vector<io::Image>& images) const;

    // fnv1a-64 over the sorted-key dump, 16 hex digits.
    static std::string content_hash(const nlohmann::json& body);

    // Assistant message content. MOCK returns the canned reply verbatim,
    // REPLAY looks the request hash up in the fixture and a miss names the
    // hash, LIVE posts the body over HTTP.
    std::string call(const std::string& prompt, const std::vector<io::Image>& images) const;

private:
    std::string call_live(const std::string& body) const;
    std::string redacted(std::string text) const;

    MllmConfig cfg_;
    std::map<std::string, std::string> fixtures_;
};

struct FixtureEntry {
    nlohmann::json request;
    std::string response;
};

// Writes [{hash, request, response}, ...]; the hash is recomputed from the
// request body, so hand-edited fixtures cannot drift from their key.
void save_fixture(const std::string& path, const std::vector<FixtureEntry>& entries);

// Decomposition through the client: renders the template, parses the reply
// as {"subs": [...]}, and validates it like any decomposition source.
instr::ComplexInstruction decompose_mllm(const MllmClient& client, const std::string& instruction);

// Conflict probe over two clause texts; expects {"conflict": bool}.
bool conflicts_mllm(const MllmClient& client, const std::string& a, const std::string& b);

// IC/BC judge backed by the client. Sends the source and the edited image
// and expects {"ic": 1..10, "bc": 1..5, "rationale": string}; the union
// mask argument is unused because the remote model only sees the images.
class MllmJudge : public bench::Judge {
public:
    explicit MllmJudge(MllmClient client) : client_(std::move(client)) {}

    bench::JudgeVerdict verdict(const io::Image& src, const io::Image& edited,
                                const instr::ComplexInstruction& ins,
                                const instr::Mask& union_mask) const override;

private:
    MllmClient client_;
};

}  // namespace mcie::mllm
