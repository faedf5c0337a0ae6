#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "dyace/controller.hpp"

namespace dyace {

using nlohmann::json;

namespace {

class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}

    std::string name() const override { return "http"; }

    BackendReply complete(const BackendRequest& request, const CallContext&) override {
        BackendReply reply;
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout_s, 0);
        client.set_read_timeout(config_.timeout_s, 0);

        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        json body;
        body["model"] = config_.model;
        body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;

        auto res = client.Post(config_.path, headers, body.dump(), "application/json");
        if (!res) {
            reply.error = "transport failure: " + httplib::to_string(res.error());
            return reply;
        }
        if (res->status != 200) {
            reply.error = "http status " + std::to_string(res->status) + ": " + res->body;
            return reply;
        }
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty()) {
            reply.error = "malformed chat-completion response";
            return reply;
        }
        const auto& choice = parsed["choices"][0];
        if (!choice.contains("message") || !choice["message"].contains("content")) {
            reply.error = "chat-completion response has no message content";
            return reply;
        }
        reply.ok = true;
        reply.text = choice["message"]["content"].get<std::string>();
        return reply;
    }

private:
    HttpBackendConfig config_;
};

} // namespace

std::unique_ptr<Backend> make_http_backend(HttpBackendConfig config) {
    return std::make_unique<HttpBackend>(std::move(config));
}

} // namespace dyace
