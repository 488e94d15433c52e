#include "mcie/mllm/mllm.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>

#include <httplib.h>

namespace mcie::mllm {

namespace {

std::atomic<bool> g_forbid_live{false};

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

}  // namespace

const char* transport_name(Transport t) {
    switch (t) {
        case Transport::Live: return "live";
        case Transport::Mock: return "mock";
        case Transport::Replay: return "replay";
    }
    throw contract_error("bad Transport value");
}

Transport parse_transport(const std::string& name) {
    if (name == "live") return Transport::Live;
    if (name == "mock") return Transport::Mock;
    if (name == "replay") return Transport::Replay;
    throw usage_error("unknown transport: " + name);
}

void forbid_live(bool on) { g_forbid_live.store(on); }
bool live_forbidden() { return g_forbid_live.load(); }

MllmConfig config_from_env() {
    MllmConfig cfg;
    cfg.endpoint = env_or_empty("MCIE_MLLM_ENDPOINT");
    cfg.model = env_or_empty("MCIE_MLLM_MODEL");
    cfg.api_key = env_or_empty("MCIE_MLLM_API_KEY");
    return cfg;
}

void PromptTemplate::validate() const {
    if (guideline.empty() || example.empty() || instance.empty()) {
        throw usage_error("prompt template needs guideline, example, and instance parts");
    }
    if (instance.find("{instruction}") == std::string::npos) {
        throw usage_error("prompt instance part lacks the {instruction} slot");
    }
}

std::string PromptTemplate::render(const std::string& instruction) const {
    validate();
    std::string filled = instance;
    filled.replace(filled.find("{instruction}"), std::string("{instruction}").size(),
                   instruction);
    return guideline + "\n\n" + example + "\n\n" + filled;
}

PromptTemplate decompose_template() {
    PromptTemplate t;
    t.guideline =
        "template v1. You split a compound image-editing instruction into atomic sub-edits. "
        "Reply with json only, shaped {\"subs\": [{\"text\": string, \"op\": "
        "\"ADD\"|\"REMOVE\"|\"CHANGE\", \"bbox\": [x0, y0, x1, y1]}]}; boxes are normalized "
        "corner coordinates.";
    t.example =
        "instruction: add a red square and remove the blue circle\n"
        "reply: {\"subs\": [{\"text\": \"add a red square\", \"op\": \"ADD\", \"bbox\": "
        "[0.0, 0.0, 0.33, 0.33]}, {\"text\": \"remove the blue circle\", \"op\": \"REMOVE\", "
        "\"bbox\": [0.34, 0.0, 0.67, 0.33]}]}";
    t.instance = "instruction: {instruction}\nreply:";
    return t;
}

PromptTemplate judge_template() {
    PromptTemplate t;
    t.guideline =
        "template v1. You grade an image edit from the source image, the edited image, and "
        "the instruction. Score instruction compliance ic on 1..10 and background consistency "
        "bc on 1..5. Reply with json only, shaped {\"ic\": int, \"bc\": int, \"rationale\": "
        "string}.";
    t.example =
        "instruction: remove the red square\n"
        "reply: {\"ic\": 10, \"bc\": 5, \"rationale\": \"the square is gone and everything "
        "else is untouched\"}";
    t.instance = "instruction: {instruction}\nimages: source then edited\nreply:";
    return t;
}

PromptTemplate conflict_template() {
    PromptTemplate t;
    t.guideline =
        "template v1. You decide whether two edit clauses target the same object so that "
        "applying both is contradictory. Reply with json only, shaped {\"conflict\": bool}.";
    t.example =
        "clauses: remove the red car | change the red car to blue\n"
        "reply: {\"conflict\": true}";
    t.instance = "clauses: {instruction}\nreply:";
    return t;
}

std::string base64(const unsigned char* bytes, std::size_t n) {
    static const char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        std::uint32_t word = static_cast<std::uint32_t>(bytes[i]) << 16;
        if (i + 1 < n) word |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < n) word |= bytes[i + 2];
        out.push_back(table[(word >> 18) & 63]);
        out.push_back(table[(word >> 12) & 63]);
        out.push_back(i + 1 < n ? table[(word >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? table[word & 63] : '=');
    }
    return out;
}

io::Image clamp_resolution(const io::Image& img, int max_side) {
    if (max_side < 1) throw usage_error("resolution cap must be positive");
    int longest = std::max(img.h, img.w);
    if (longest <= max_side) return img;
    int nh = std::max(1, img.h * max_side / longest);
    int nw = std::max(1, img.w * max_side / longest);
    io::Image out(nh, nw, img.c);
    for (int r = 0; r < nh; ++r) {
        int sr = std::min(img.h - 1, r * img.h / nh);
        for (int c = 0; c < nw; ++c) {
            int sc = std::min(img.w - 1, c * img.w / nw);
            for (int ch = 0; ch < img.c; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
        }
    }
    return out;
}

std::string image_payload(const io::Image& img, int max_side) {
    io::Image capped = clamp_resolution(img, max_side);
    if (capped.c != 3) throw data_error("image payloads need 3 channels");
    std::string ppm = "P6\n" + std::to_string(capped.w) + " " + std::to_string(capped.h) +
                      "\n255\n";
    for (double v : capped.data) {
        ppm.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    return "data:image/x-portable-pixmap;base64," + base64(ppm);
}

MllmClient::MllmClient(MllmConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.retries < 0 || cfg_.retries > 1) {
        throw usage_error("retries must be 0 or 1");
    }
    if (cfg_.timeout_s <= 0.0) throw usage_error("timeout must be positive");
    if (cfg_.transport == Transport::Live && cfg_.endpoint.empty()) {
        throw usage_error("live transport needs an endpoint");
    }
    if (cfg_.transport == Transport::Replay) {
        if (cfg_.fixture_path.empty()) throw usage_error("replay transport needs a fixture");
        std::ifstream is(cfg_.fixture_path);
        if (!is) throw data_error("cannot open fixture: " + cfg_.fixture_path);
        nlohmann::json entries = nlohmann::json::parse(is, nullptr, false);
        if (entries.is_discarded() || !entries.is_array()) {
            throw data_error("fixture is not a json array: " + cfg_.fixture_path);
        }
        for (const nlohmann::json& e : entries) {
            if (!e.contains("hash") || !e.contains("response")) {
                throw data_error("fixture entry lacks hash/response: " + cfg_.fixture_path);
            }
            fixtures_[e.at("hash").get<std::string>()] = e.at("response").get<std::string>();
        }
    }
}

nlohmann::json MllmClient::request_body(const std::string& prompt,
                                        const std::vector<io::Image>& images) const {
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", prompt}});
    for (const io::Image& img : images) {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_payload(img)}}}});
    }
    return {{"model", cfg_.model},
            {"temperature", 0.0},
            {"max_tokens", 512},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
}

std::string MllmClient::content_hash(const nlohmann::json& body) {
    const std::string bytes = body.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string MllmClient::redacted(std::string text) const {
    if (cfg_.api_key.empty()) return text;
    for (std::size_t pos = text.find(cfg_.api_key); pos != std::string::npos;
         pos = text.find(cfg_.api_key, pos)) {
        text.replace(pos, cfg_.api_key.size(), "[redacted]");
        pos += 10;
    }
    return text;
}

std::string MllmClient::call(const std::string& prompt,
                             const std::vector<io::Image>& images) const {
    switch (cfg_.transport) {
        case Transport::Mock:
            return cfg_.mock_reply;
        case Transport::Replay: {
            const std::string hash = content_hash(request_body(prompt, images));
            auto it = fixtures_.find(hash);
            if (it == fixtures_.end()) {
                throw data_error("replay fixture miss for request hash " + hash + " in " +
                                 cfg_.fixture_path);
            }
            return it->second;
        }
        case Transport::Live:
            return call_live(request_body(prompt, images).dump());
    }
    throw contract_error("bad Transport value");
}

std::string MllmClient::call_live(const std::string& body) const {
    if (live_forbidden()) {
        throw contract_error("live mllm transport is forbidden in this profile");
    }

    const std::string& url = cfg_.endpoint;
    if (url.rfind("http://", 0) != 0) {
        throw usage_error("only http:// endpoints are supported: " + url);
    }
    std::size_t path_start = url.find('/', 7);
    std::string host_port = url.substr(7, path_start - 7);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    std::string host = host_port;
    int port = 80;
    if (std::size_t colon = host_port.find(':'); colon != std::string::npos) {
        host = host_port.substr(0, colon);
        port = std::stoi(host_port.substr(colon + 1));
    }

    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    const time_t whole = static_cast<time_t>(cfg_.timeout_s);
    const long micros = static_cast<long>((cfg_.timeout_s - whole) * 1e6);

    httplib::Result res;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
        httplib::Client http(host, port);
        http.set_connection_timeout(whole, micros);
        http.set_read_timeout(whole, micros);
        http.set_write_timeout(whole, micros);
        res = http.Post(path, headers, body, "application/json");
        if (res) break;
    }
    if (!res) {
        throw transport_error("mllm transport failed: " + httplib::to_string(res.error()));
    }
    if (res->status / 100 != 2) {
        throw transport_error("mllm http " + std::to_string(res->status) + ": " +
                              redacted(res->body));
    }

    nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) {
        throw data_error("mllm schema: reply is not json; body: " + redacted(res->body));
    }
    if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty() ||
        !reply["choices"][0].contains("message") ||
        !reply["choices"][0]["message"].contains("content") ||
        !reply["choices"][0]["message"]["content"].is_string()) {
        throw data_error("mllm schema: missing choices[0].message.content; body: " +
                         redacted(res->body));
    }
    return reply["choices"][0]["message"]["content"].get<std::string>();
}

void save_fixture(const std::string& path, const std::vector<FixtureEntry>& entries) {
    nlohmann::json out = nlohmann::json::array();
    for (const FixtureEntry& e : entries) {
        out.push_back({{"hash", MllmClient::content_hash(e.request)},
                       {"request", e.request},
                       {"response", e.response}});
    }
    std::ofstream os(path);
    if (!os) throw data_error("cannot write fixture: " + path);
    os << out.dump(2) << "\n";
}

instr::ComplexInstruction decompose_mllm(const MllmClient& client,
                                         const std::string& instruction) {
    const std::string prompt = decompose_template().render(instruction);
    const std::string content = client.call(prompt, {});

    nlohmann::json parsed = nlohmann::json::parse(content, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("subs")) {
        throw data_error("mllm schema: decomposition reply lacks subs; body: " + content);
    }
    return instr::instruction_from_json({{"raw_text", instruction}, {"subs", parsed["subs"]}});
}

bool conflicts_mllm(const MllmClient& client, const std::string& a, const std::string& b) {
    const std::string prompt = conflict_template().render(a + " | " + b);
    const std::string content = client.call(prompt, {});

    nlohmann::json parsed = nlohmann::json::parse(content, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("conflict") ||
        !parsed["conflict"].is_boolean()) {
        throw data_error("mllm schema: conflict reply lacks a boolean; body: " + content);
    }
    return parsed["conflict"].get<bool>();
}

bench::JudgeVerdict MllmJudge::verdict(const io::Image& src, const io::Image& edited,
                                       const instr::ComplexInstruction& ins,
                                       const instr::Mask&) const {
    const std::string prompt = judge_template().render(ins.raw_text);
    const std::string content = client_.call(prompt, {src, edited});

    nlohmann::json parsed = nlohmann::json::parse(content, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("ic") || !parsed.contains("bc") ||
        !parsed["ic"].is_number_integer() || !parsed["bc"].is_number_integer()) {
        throw data_error("mllm schema: judge reply lacks integer ic/bc; body: " + content);
    }
    bench::JudgeVerdict v;
    v.ic_raw = parsed["ic"].get<int>();
    v.bc_raw = parsed["bc"].get<int>();
    v.rationale = parsed.value("rationale", "");
    return v;
}

}  // namespace mcie::mllm
