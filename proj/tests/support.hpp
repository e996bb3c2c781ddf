#pragma once

#include "vgtree/providers.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>

namespace testing {

inline std::shared_ptr<vgtree::ProviderHub> make_hub(std::shared_ptr<vgtree::ModelBackend> backend)
{
    auto hub = std::make_shared<vgtree::ProviderHub>();
    hub->set_all_backends(backend);
    vgtree::RetryPolicy fast;
    fast.base_delay = std::chrono::milliseconds(0);
    hub->set_retry_policy(fast);
    return hub;
}

/// Backend driven by a callback, for one-off behaviours.
class LambdaBackend : public vgtree::ModelBackend {
public:
    using Fn = std::function<vgtree::ModelResponse(const vgtree::ModelRequest&, int call)>;
    explicit LambdaBackend(Fn fn) : fn_(std::move(fn)) {}
    vgtree::ModelResponse generate(const vgtree::ModelRequest& r) override { return fn_(r, calls_++); }
    std::string model_id() const override { return "lambda"; }
    int calls() const { return calls_.load(); }

private:
    Fn fn_;
    std::atomic<int> calls_{0};
};

class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("vgtree-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace testing
