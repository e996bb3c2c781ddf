#include "vgtree/harness.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/hashing.hpp"
#include "vgtree/remote_backend.hpp"
#include "vgtree/synthetic_world.hpp"
#include "vgtree/text.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace vgtree {

using json = nlohmann::ordered_json;
namespace pt = boost::property_tree;

// -- config -------------------------------------------------------------------

namespace {

template <class T>
T parse_value(const std::string& section, const std::string& key, const std::string& raw)
{
    std::istringstream in(raw);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof())
        throw ConfigError("[" + section + "] " + key + ": cannot parse '" + raw + "'");
    return v;
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& raw)
{
    auto v = text::to_lower(text::trim(raw));
    if (v == "true" || v == "yes" || v == "1" || v == "on")
        return true;
    if (v == "false" || v == "no" || v == "0" || v == "off")
        return false;
    throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + raw + "'");
}

std::size_t parse_count(const std::string& section, const std::string& key, const std::string& raw)
{
    auto v = parse_value<long long>(section, key, raw);
    if (v < 0)
        throw ConfigError("[" + section + "] " + key + " must not be negative");
    return static_cast<std::size_t>(v);
}

void apply_backend_key(BackendConfig& b, const std::string& section, const std::string& key, const std::string& raw)
{
    if (key == "backend")
        b.backend = text::to_lower(text::trim(raw));
    else if (key == "endpoint_url")
        b.endpoint_url = text::trim(raw);
    else if (key == "model_id")
        b.model_id = text::trim(raw);
    else if (key == "api_key_env")
        b.api_key_env = text::trim(raw);
    else if (key == "requests_per_second")
        b.requests_per_second = parse_value<double>(section, key, raw);
    else if (key == "burst")
        b.burst = parse_value<double>(section, key, raw);
    else if (key == "noise_epsilon")
        b.noise_epsilon = parse_value<double>(section, key, raw);
    else if (key == "noise_seed")
        b.noise_seed = parse_value<std::uint64_t>(section, key, raw);
    else if (key == "logprobs")
        b.logprobs = parse_bool(section, key, raw);
    else if (key == "api_key")
        throw ConfigError("[" + section + "] api_key is not accepted; name an environment variable with api_key_env");
    else
        throw ConfigError("[" + section + "] unknown key '" + key + "'");
}

void apply_run_key(RunConfig& c, const std::string& key, const std::string& raw)
{
    const std::string s = "run";
    if (key == "frames_per_video")
        c.frames_per_video = parse_count(s, key, raw);
    else if (key == "max_depth")
        c.max_depth = parse_count(s, key, raw);
    else if (key == "prover_frame_count")
        c.prover_frame_count = parse_count(s, key, raw);
    else if (key == "prover_kind") {
        auto v = text::to_lower(text::trim(raw));
        if (v != "video" && v != "image")
            throw ConfigError("[run] prover_kind must be video or image");
        c.prover_kind = v == "video" ? ProverKind::Video : ProverKind::Image;
    } else if (key == "look_around_window")
        c.look_around_window = parse_count(s, key, raw);
    else if (key == "expansion") {
        auto v = text::to_lower(text::trim(raw));
        if (v != "dynamic" && v != "static")
            throw ConfigError("[run] expansion must be dynamic or static");
        c.expansion = v == "dynamic" ? ExpansionMode::Dynamic : ExpansionMode::Static;
    } else if (key == "grounding") {
        auto m = grounding_mode_from_string(raw);
        if (!m)
            throw ConfigError("[run] grounding must be grounded, full or gt");
        c.grounding = *m;
    } else if (key == "concurrency")
        c.concurrency = parse_count(s, key, raw);
    else if (key == "malformed_retries")
        c.malformed_retries = static_cast<int>(parse_count(s, key, raw));
    else if (key == "allow_text_fallback")
        c.allow_text_fallback = parse_bool(s, key, raw);
    else if (key == "failure_threshold")
        c.failure_threshold = parse_value<double>(s, key, raw);
    else if (key == "cache_dir")
        c.cache_dir = text::trim(raw);
    else if (key == "caption_dir")
        c.caption_dir = text::trim(raw);
    else if (key == "templates")
        c.templates_path = text::trim(raw);
    else if (key == "frames_root")
        c.frames_root = text::trim(raw);
    else if (key == "frames_fps")
        c.frames_fps = parse_value<double>(s, key, raw);
    else if (key == "intervals")
        c.intervals_path = text::trim(raw);
    else if (key == "report_timing")
        c.report_timing = parse_bool(s, key, raw);
    else
        throw ConfigError("[run] unknown key '" + key + "'");
}

void apply_retry_key(RetryPolicy& r, const std::string& key, const std::string& raw)
{
    const std::string s = "retry";
    if (key == "max_retries")
        r.max_retries = static_cast<int>(parse_count(s, key, raw));
    else if (key == "base_delay_ms")
        r.base_delay = std::chrono::milliseconds(parse_count(s, key, raw));
    else if (key == "multiplier")
        r.multiplier = parse_value<double>(s, key, raw);
    else if (key == "jitter")
        r.jitter = parse_value<double>(s, key, raw);
    else
        throw ConfigError("[retry] unknown key '" + key + "'");
}

json backend_to_json(const BackendConfig& b)
{
    json j;
    j["backend"] = b.backend;
    j["endpoint_url"] = b.endpoint_url;
    j["model_id"] = b.model_id;
    j["api_key_env"] = b.api_key_env;
    j["requests_per_second"] = b.requests_per_second;
    j["burst"] = b.burst;
    j["noise_epsilon"] = b.noise_epsilon;
    j["noise_seed"] = b.noise_seed;
    j["logprobs"] = b.logprobs;
    return j;
}

std::string sanitize(std::string_view s)
{
    std::string out;
    for (char c : s) {
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        out.push_back(ok ? c : '_');
    }
    return out;
}

std::string fmt(double v, int precision = 4)
{
    std::ostringstream o;
    o << std::fixed << std::setprecision(precision) << v;
    return o.str();
}

std::string fmt_general(double v)
{
    std::ostringstream o;
    o << v;
    return o.str();
}

} // namespace

const BackendConfig& RunConfig::backend_for(ProviderRole role) const
{
    auto it = roles.find(role);
    return it == roles.end() ? default_backend : it->second;
}

void RunConfig::validate() const
{
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1)
            throw ConfigError(std::string(name) + " must be at least 1");
    };
    positive(frames_per_video, "frames_per_video");
    positive(max_depth, "max_depth");
    positive(prover_frame_count, "prover_frame_count");
    positive(look_around_window, "look_around_window");
    positive(concurrency, "concurrency");
    if (!(frames_fps > 0.0))
        throw ConfigError("frames_fps must be positive");
    if (failure_threshold < 0.0 || failure_threshold > 1.0)
        throw ConfigError("failure_threshold must lie in [0, 1]");
    if (retry.max_retries < 0 || retry.multiplier < 1.0 || retry.jitter < 0.0 || retry.jitter > 1.0)
        throw ConfigError("retry policy out of range");
    for (auto role : kAllRoles) {
        const auto& b = backend_for(role);
        auto where = "[" + text::to_lower(to_string(role)) + "] ";
        if (b.backend != "oracle" && b.backend != "remote" && b.backend != "echo")
            throw ConfigError(where + "backend must be oracle, remote or echo");
        if (b.backend == "remote" && (b.endpoint_url.empty() || b.model_id.empty()))
            throw ConfigError(where + "remote backend needs endpoint_url and model_id");
        if (b.noise_epsilon < 0.0 || b.noise_epsilon >= 0.5)
            throw ConfigError(where + "noise_epsilon must lie in [0, 0.5)");
        if (b.requests_per_second < 0.0)
            throw ConfigError(where + "requests_per_second must not be negative");
    }
}

RunConfig parse_run_config(const std::string& content)
{
    pt::ptree tree;
    try {
        std::istringstream in(content);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    RunConfig c;
    // [default] first so role sections can override it
    if (auto def = tree.get_child_optional("default")) {
        for (const auto& [key, node] : *def)
            apply_backend_key(c.default_backend, "default", key, node.data());
    }
    for (const auto& [section, node] : tree) {
        if (node.empty() && !node.data().empty())
            throw ConfigError("key '" + section + "' must sit inside a section");
        if (section == "default")
            continue;
        if (section == "run") {
            for (const auto& [key, v] : node)
                apply_run_key(c, key, v.data());
        } else if (section == "retry") {
            for (const auto& [key, v] : node)
                apply_retry_key(c.retry, key, v.data());
        } else if (auto role = provider_role_from_string(section)) {
            BackendConfig b = c.default_backend;
            for (const auto& [key, v] : node)
                apply_backend_key(b, section, key, v.data());
            c.roles[*role] = b;
        } else {
            throw ConfigError("unknown section [" + section + "]");
        }
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::string content;
    try {
        content = read_text_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(content);
}

json config_to_json(const RunConfig& c)
{
    json j;
    j["frames_per_video"] = c.frames_per_video;
    j["max_depth"] = c.max_depth;
    j["prover_frame_count"] = c.prover_frame_count;
    j["prover_kind"] = std::string(to_string(c.prover_kind));
    j["look_around_window"] = c.look_around_window;
    j["expansion"] = std::string(to_string(c.expansion));
    j["grounding"] = std::string(to_string(c.grounding));
    j["malformed_retries"] = c.malformed_retries;
    j["allow_text_fallback"] = c.allow_text_fallback;
    j["frames_fps"] = c.frames_fps;
    j["caption_store"] = !c.caption_dir.empty();
    j["templates"] = c.templates_path;
    json roles = json::object();
    for (auto role : kAllRoles)
        roles[std::string(to_string(role))] = backend_to_json(c.backend_for(role));
    j["roles"] = std::move(roles);
    return j;
}

std::string config_digest(const RunConfig& c)
{
    return sha256_hex(config_to_json(c).dump()).substr(0, 16);
}

std::shared_ptr<ProviderHub> build_hub(const RunConfig& c)
{
    c.validate();
    auto hub = std::make_shared<ProviderHub>();
    std::vector<std::pair<BackendConfig, std::shared_ptr<ModelBackend>>> made;
    std::map<std::string, std::shared_ptr<RateLimiter>> limiters;

    for (auto role : kAllRoles) {
        const auto& b = c.backend_for(role);
        auto it = std::find_if(made.begin(), made.end(), [&](const auto& p) { return p.first == b; });
        if (it != made.end()) {
            hub->set_backend(role, it->second);
            continue;
        }
        std::shared_ptr<ModelBackend> backend;
        if (b.backend == "oracle") {
            OracleOptions o;
            o.noise_epsilon = b.noise_epsilon;
            o.noise_seed = b.noise_seed;
            o.logprobs = b.logprobs;
            backend = std::make_shared<OracleBackend>(o);
        } else if (b.backend == "echo") {
            backend = std::make_shared<EchoRewriter>();
        } else {
            HttpChatConfig h;
            h.endpoint_url = b.endpoint_url;
            h.model_id = b.model_id;
            h.api_key_env = b.api_key_env;
            if (b.requests_per_second > 0.0) {
                auto& lim = limiters[b.endpoint_url];
                if (!lim)
                    lim = std::make_shared<RateLimiter>(b.requests_per_second, b.burst);
                h.limiter = lim;
            }
            backend = std::make_shared<HttpChatBackend>(h);
        }
        made.emplace_back(b, backend);
        hub->set_backend(role, backend);
    }

    if (!c.templates_path.empty())
        hub->templates().load_overrides(c.templates_path);
    if (!c.cache_dir.empty())
        hub->set_cache(std::make_shared<ResponseCache>(c.cache_dir));
    hub->set_retry_policy(c.retry);
    hub->set_allow_text_fallback(c.allow_text_fallback);
    return hub;
}

// -- videos -------------------------------------------------------------------

std::map<std::string, std::pair<double, double>> load_intervals(const std::filesystem::path& path)
{
    std::map<std::string, std::pair<double, double>> out;
    try {
        auto doc = json::parse(read_text_file(path));
        for (const auto& [id, v] : doc.items())
            out[id] = {v.at(0).get<double>(), v.at(1).get<double>()};
    } catch (const json::exception& e) {
        throw ConfigError("intervals file " + path.string() + ": " + e.what());
    }
    return out;
}

VideoContext resolve_video(const QATask& task, const RunConfig& c,
                           const std::map<std::string, std::pair<double, double>>& intervals)
{
    VideoContext v;
    if (auto it = intervals.find(task.id); it != intervals.end()) {
        v.external_interval_s = it->second;
    } else if (auto gi = task.extras.find("gt_interval"); gi != task.extras.end() && gi->is_array() && gi->size() == 2) {
        v.external_interval_s = std::make_pair((*gi)[0].get<double>(), (*gi)[1].get<double>());
    }

    if (auto ref = parse_synthetic_ref(task.video_ref)) {
        auto world = generate_world(ref->seed, WorldParams::standard(ref->num_frames, ref->num_events));
        v.frames = synthetic_frames(world);
        return v;
    }

    std::filesystem::path dir = c.frames_root.empty() ? std::filesystem::path(task.video_ref)
                                                      : std::filesystem::path(c.frames_root) / task.video_ref;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        return v;
    static const std::set<std::string> kImage{".jpg", ".jpeg", ".png", ".webp", ".bmp"};
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir, ec))
        if (e.is_regular_file() && kImage.contains(text::to_lower(e.path().extension().string())))
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        return v;

    std::size_t k = std::min(c.frames_per_video, files.size());
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t src = k == 1 ? (files.size() - 1) / 2 : (i * (files.size() - 1) + (k - 1) / 2) / (k - 1);
        v.frames.push_back({i, static_cast<double>(src) / c.frames_fps, files[src].string()});
    }
    return v;
}

// -- evaluation ---------------------------------------------------------------

std::string task_ids_digest(const Dataset& dataset)
{
    std::vector<std::string> ids;
    for (const auto& t : dataset.tasks)
        ids.push_back(t.id);
    std::sort(ids.begin(), ids.end());
    return sha256_hex(text::join(ids, "\n")).substr(0, 16);
}

EvalReport summarize(const Dataset& dataset, const RunConfig& config, std::vector<TaskRow> rows)
{
    EvalReport r;
    r.dataset = dataset.name;
    r.variant = dataset.variant;
    r.config_digest = config_digest(config);
    r.task_ids_digest = task_ids_digest(dataset);
    r.grounding = std::string(to_string(config.grounding));
    r.expansion = std::string(to_string(config.expansion));
    r.tasks = rows.size();

    for (auto role : kAllRoles)
        r.calls[std::string(to_string(role))] = 0;
    for (const auto& row : rows) {
        if (row.failed)
            r.failed.push_back(row.task_id);
        for (const auto& [role, n] : row.calls)
            r.calls[role] += n;
        r.decompositions += row.decompositions;
        r.prunes += row.prunes;
        if (!row.ground_truth || row.failed)
            continue;
        auto& cell = r.per_type[std::string(to_string(row.question_type))];
        ++cell.answered;
        ++r.overall.answered;
        cell.correct += row.correct;
        r.overall.correct += row.correct;
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    r.overall.accuracy = ratio(r.overall.correct, r.overall.answered);
    for (auto& [_, cell] : r.per_type)
        cell.accuracy = ratio(cell.correct, cell.answered);
    std::size_t total = 0;
    for (const auto& [role, n] : r.calls) {
        r.calls_avg[role] = ratio(n, r.tasks);
        total += n;
    }
    r.calls_avg["total"] = ratio(total, r.tasks);
    r.decompositions_avg = ratio(r.decompositions, r.tasks);
    r.rows = std::move(rows);
    return r;
}

EvalRun run_eval(const Dataset& dataset, const RunConfig& config, const ProviderHub& hub, const EvalOptions& opts)
{
    config.validate();
    auto started = std::chrono::steady_clock::now();
    const auto calls_before = hub.backend_calls();

    std::map<std::string, std::pair<double, double>> intervals;
    if (!config.intervals_path.empty())
        intervals = load_intervals(config.intervals_path);
    std::unique_ptr<CaptionStore> captions;
    if (!config.caption_dir.empty())
        captions = std::make_unique<CaptionStore>(config.caption_dir);
    if (opts.trace_dir)
        std::filesystem::create_directories(*opts.trace_dir);

    EngineConfig engine;
    engine.tree.max_depth = config.max_depth;
    engine.tree.mode = config.expansion;
    engine.tree.malformed_retries = config.malformed_retries;
    engine.tree.prover_kind = config.prover_kind;
    engine.tree.prover_frame_count = config.prover_frame_count;
    engine.grounding = config.grounding;
    engine.look_around_window = config.look_around_window;
    engine.caption_store = captions.get();

    const auto n = dataset.tasks.size();
    std::vector<TaskRow> rows(n);
    std::vector<TaskResult> results(opts.keep_results ? n : 0);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> hits{0};
    std::mutex io_mu;
    std::string io_error;

    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const auto& task = dataset.tasks[i];
            TaskResult res;
            try {
                auto video = resolve_video(task, config, intervals);
                res = evaluate_task(task, video, hub, engine);
            } catch (const std::exception& e) {
                res.forest.task_id = task.id;
                res.forest.ground_truth_index = task.ground_truth_index;
                res.forest.failed = true;
                res.forest.error = e.what();
                res.forest.call_counts = res.transcript.counts_by_role();
            }
            auto& row = rows[i];
            row.task_id = task.id;
            row.question_type = task.question_type;
            row.ground_truth = task.ground_truth_index;
            row.failed = res.forest.failed;
            row.error = res.forest.error;
            if (!row.failed)
                row.selected = res.forest.selected_index;
            row.correct = !row.failed && row.ground_truth && row.selected == row.ground_truth;
            row.calls = res.forest.call_counts;
            for (auto d : res.forest.decompositions_per_root)
                row.decompositions += d;
            row.prunes = prune_events(res.forest).size();
            row.cache_hits = res.transcript.cache_hits();
            hits += row.cache_hits;
            if (opts.trace_dir) {
                try {
                    emit_trace(task, res, *opts.trace_dir);
                } catch (const IoError& e) {
                    std::lock_guard lock(io_mu);
                    if (io_error.empty())
                        io_error = e.what();
                }
            }
            if (opts.keep_results)
                results[i] = std::move(res);
        }
    };

    std::size_t threads = std::min<std::size_t>(config.concurrency, std::max<std::size_t>(n, 1));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    if (!io_error.empty())
        throw IoError(io_error);

    EvalRun run;
    run.report = summarize(dataset, config, std::move(rows));
    if (config.report_timing)
        run.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    run.results = std::move(results);
    run.backend_calls = hub.backend_calls() - calls_before;
    run.cache_hits = hits;
    return run;
}

// -- reports ------------------------------------------------------------------

namespace {

json cell_to_json(const AccuracyCell& c)
{
    return {{"answered", c.answered}, {"correct", c.correct}, {"accuracy", c.accuracy}};
}

AccuracyCell cell_from_json(const json& j)
{
    return {j.at("answered").get<std::size_t>(), j.at("correct").get<std::size_t>(), j.at("accuracy").get<double>()};
}

json opt_index(const std::optional<std::size_t>& v)
{
    return v ? json(*v) : json(nullptr);
}

} // namespace

json report_to_json(const EvalReport& r)
{
    json doc;
    doc["dataset"] = r.dataset;
    doc["variant"] = std::string(to_string(r.variant));
    doc["config_digest"] = r.config_digest;
    doc["task_ids_digest"] = r.task_ids_digest;
    doc["grounding"] = r.grounding;
    doc["expansion"] = r.expansion;
    doc["tasks"] = r.tasks;
    doc["accuracy"] = cell_to_json(r.overall);
    json types = json::object();
    for (const auto& [k, c] : r.per_type)
        types[k] = cell_to_json(c);
    doc["per_type"] = std::move(types);
    json calls = json::object();
    for (const auto& [k, v] : r.calls)
        calls[k] = v;
    doc["calls"] = std::move(calls);
    json avg = json::object();
    for (const auto& [k, v] : r.calls_avg)
        avg[k] = v;
    doc["calls_avg"] = std::move(avg);
    doc["decompositions"] = r.decompositions;
    doc["decompositions_avg"] = r.decompositions_avg;
    doc["prunes"] = r.prunes;
    doc["failed"] = r.failed;
    json rows = json::array();
    for (const auto& row : r.rows) {
        json jr;
        jr["id"] = row.task_id;
        jr["type"] = std::string(to_string(row.question_type));
        jr["ground_truth"] = opt_index(row.ground_truth);
        jr["selected"] = opt_index(row.selected);
        jr["correct"] = row.correct;
        jr["failed"] = row.failed;
        if (row.failed)
            jr["error"] = row.error;
        json rc = json::object();
        for (const auto& [k, v] : row.calls)
            rc[k] = v;
        jr["calls"] = std::move(rc);
        jr["decompositions"] = row.decompositions;
        jr["prunes"] = row.prunes;
        rows.push_back(std::move(jr));
    }
    doc["rows"] = std::move(rows);
    if (r.wall_time_s)
        doc["wall_time_s"] = *r.wall_time_s;
    return doc;
}

EvalReport report_from_json(const json& doc)
{
    EvalReport r;
    try {
        r.dataset = doc.at("dataset").get<std::string>();
        r.variant = doc.at("variant") == "Rewritten" ? DatasetVariant::Rewritten : DatasetVariant::Original;
        r.config_digest = doc.at("config_digest").get<std::string>();
        r.task_ids_digest = doc.at("task_ids_digest").get<std::string>();
        r.grounding = doc.value("grounding", std::string());
        r.expansion = doc.value("expansion", std::string());
        r.tasks = doc.at("tasks").get<std::size_t>();
        r.overall = cell_from_json(doc.at("accuracy"));
        for (const auto& [k, v] : doc.at("per_type").items())
            r.per_type[k] = cell_from_json(v);
        for (const auto& [k, v] : doc.at("calls").items())
            r.calls[k] = v.get<std::size_t>();
        for (const auto& [k, v] : doc.at("calls_avg").items())
            r.calls_avg[k] = v.get<double>();
        r.decompositions = doc.value("decompositions", std::size_t{0});
        r.decompositions_avg = doc.value("decompositions_avg", 0.0);
        r.prunes = doc.value("prunes", std::size_t{0});
        r.failed = doc.at("failed").get<std::vector<std::string>>();
        for (const auto& jr : doc.at("rows")) {
            TaskRow row;
            row.task_id = jr.at("id").get<std::string>();
            row.question_type = question_type_from_string(jr.at("type").get<std::string>()).value_or(QuestionType::Unknown);
            if (!jr.at("ground_truth").is_null())
                row.ground_truth = jr["ground_truth"].get<std::size_t>();
            if (!jr.at("selected").is_null())
                row.selected = jr["selected"].get<std::size_t>();
            row.correct = jr.at("correct").get<bool>();
            row.failed = jr.at("failed").get<bool>();
            row.error = jr.value("error", std::string());
            for (const auto& [k, v] : jr.at("calls").items())
                row.calls[k] = v.get<std::size_t>();
            row.decompositions = jr.value("decompositions", std::size_t{0});
            row.prunes = jr.value("prunes", std::size_t{0});
            r.rows.push_back(std::move(row));
        }
        if (doc.contains("wall_time_s"))
            r.wall_time_s = doc["wall_time_s"].get<double>();
    } catch (const json::exception& e) {
        throw SchemaError({std::string("report: ") + e.what()});
    }
    return r;
}

std::string render_report_markdown(const EvalReport& r)
{
    std::ostringstream o;
    o << "# " << r.dataset << " (" << to_string(r.variant) << ")\n\n";
    o << "grounding: " << r.grounding << ", expansion: " << r.expansion << ", config: " << r.config_digest << "\n\n";
    o << "| Type | Answered | Correct | Accuracy |\n|---|---:|---:|---:|\n";
    for (const auto& [k, c] : r.per_type)
        o << "| " << k << " | " << c.answered << " | " << c.correct << " | " << fmt(c.accuracy) << " |\n";
    o << "| All | " << r.overall.answered << " | " << r.overall.correct << " | " << fmt(r.overall.accuracy) << " |\n\n";
    o << "| Role | Calls | Avg per task |\n|---|---:|---:|\n";
    for (const auto& [k, v] : r.calls)
        o << "| " << k << " | " << v << " | " << fmt(r.calls_avg.at(k), 2) << " |\n";
    o << "| total | | " << fmt(r.calls_avg.count("total") ? r.calls_avg.at("total") : 0.0, 2) << " |\n\n";
    o << "decompositions: " << r.decompositions << " (avg " << fmt(r.decompositions_avg, 2) << " per task), prunes: "
      << r.prunes << "\n";
    if (!r.failed.empty()) {
        o << "\nfailed tasks (" << r.failed.size() << "):\n";
        for (const auto& row : r.rows)
            if (row.failed)
                o << "- " << row.task_id << ": " << row.error << "\n";
    }
    if (r.wall_time_s)
        o << "\nwall time: " << fmt(*r.wall_time_s, 2) << " s\n";
    return o.str();
}

// -- traces -------------------------------------------------------------------

json trace_to_json(const QATask& task, const TaskResult& result)
{
    auto doc = forest_to_json(result.forest);
    doc["question"] = task.question;
    doc["question_type"] = std::string(to_string(task.question_type));
    json opts = json::array();
    for (const auto& o : task.options)
        opts.push_back(o.text);
    doc["options"] = std::move(opts);
    if (result.moment) {
        const auto& m = *result.moment;
        doc["moment"] = {{"anchor", m.anchor_index},
                         {"directive", std::string(to_string(m.directive))},
                         {"start", m.start_index},
                         {"end", m.end_index},
                         {"video_len", m.video_len},
                         {"source", std::string(to_string(m.source))}};
    } else {
        doc["moment"] = nullptr;
    }
    doc["grounding"] = result.grounding ? grounding_to_json(*result.grounding) : json(nullptr);
    return doc;
}

std::filesystem::path emit_trace(const QATask& task, const TaskResult& result, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create trace directory " + dir.string() + ": " + ec.message());
    auto base = sanitize(task.id);
    auto trace_path = dir / (base + ".trace.json");
    write_text_file(trace_path, trace_to_json(task, result).dump(2) + "\n");
    std::string lines;
    for (const auto& e : result.transcript.to_json())
        lines += e.dump() + "\n";
    write_text_file(dir / (base + ".transcript.jsonl"), lines);
    return trace_path;
}

std::string render_trace_text(const json& trace)
{
    auto forest = forest_from_json(trace);
    std::ostringstream o;
    o << "task " << forest.task_id;
    if (trace.contains("question"))
        o << ": " << trace["question"].get<std::string>();
    o << "\n";
    if (trace.contains("moment") && !trace["moment"].is_null()) {
        const auto& m = trace["moment"];
        o << "moment [" << m.at("start").get<std::size_t>() << ", " << m.at("end").get<std::size_t>() << "] of "
          << m.at("video_len").get<std::size_t>() << " (" << m.at("directive").get<std::string>() << " from frame "
          << m.at("anchor").get<std::size_t>() << ")\n";
    }

    std::function<void(const std::string&, int)> walk = [&](const std::string& id, int indent) {
        const auto& n = forest.node(id);
        o << std::string(static_cast<std::size_t>(indent) * 2, ' ') << id << " [" << to_string(n.status)
          << "] direct=" << fmt(n.scores.direct) << " proof=" << (n.scores.proof ? fmt(*n.scores.proof) : "-")
          << " final=" << fmt(n.scores.final) << "  " << n.statement.text << "\n";
        for (const auto& c : n.children)
            walk(c, indent + 1);
    };
    for (const auto& r : forest.roots)
        walk(r, 1);

    if (forest.failed)
        o << "failed: " << forest.error << "\n";
    else
        o << "selected: " << forest.selected_index
          << (forest.ground_truth_index ? " (ground truth " + std::to_string(*forest.ground_truth_index) + ")" : "")
          << "\n";
    auto events = prune_events(forest);
    o << "prune events: " << events.size() << "\n";
    for (const auto& e : events)
        o << "  (" << e.node_id << ", " << fmt_general(e.direct) << ", " << fmt_general(e.proof_estimate) << ")  "
          << fmt_general(e.proof_estimate) << " < " << fmt_general(e.direct) << "\n";
    o << "calls:";
    for (const auto& [k, v] : forest.call_counts)
        if (v > 0)
            o << " " << k << "=" << v;
    o << "\n";
    return o.str();
}

AccuracyCell accuracy_from_traces(const std::filesystem::path& dir)
{
    AccuracyCell cell;
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
        auto name = e.path().filename().string();
        if (!name.ends_with(".trace.json"))
            continue;
        auto doc = json::parse(read_text_file(e.path()));
        if (doc.value("failed", false) || doc.at("ground_truth").is_null())
            continue;
        ++cell.answered;
        cell.correct += doc.at("selected_index") == doc.at("ground_truth");
    }
    if (ec)
        throw IoError("cannot list " + dir.string() + ": " + ec.message());
    cell.accuracy = cell.answered == 0 ? 0.0 : static_cast<double>(cell.correct) / static_cast<double>(cell.answered);
    return cell;
}

// -- comparison ---------------------------------------------------------------

Comparison compare_runs(const EvalReport& a, const EvalReport& b)
{
    if (a.task_ids_digest != b.task_ids_digest)
        throw MismatchedDatasets("reports cover different task sets (" + a.task_ids_digest + " vs " +
                                 b.task_ids_digest + ")");
    Comparison c;
    auto label = [](const EvalReport& r) {
        return r.dataset + " [" + std::string(to_string(r.variant)) + ", " + r.grounding + ", " + r.expansion + "]";
    };
    c.label_a = label(a);
    c.label_b = label(b);

    std::set<std::string> types;
    for (const auto& [k, _] : a.per_type)
        types.insert(k);
    for (const auto& [k, _] : b.per_type)
        types.insert(k);
    for (const auto& t : types) {
        double va = a.per_type.count(t) ? a.per_type.at(t).accuracy : 0.0;
        double vb = b.per_type.count(t) ? b.per_type.at(t).accuracy : 0.0;
        c.accuracy.push_back({t, va, vb, vb - va});
    }
    c.accuracy.push_back({"All", a.overall.accuracy, b.overall.accuracy, b.overall.accuracy - a.overall.accuracy});

    std::set<std::string> roles;
    for (const auto& [k, _] : a.calls_avg)
        roles.insert(k);
    for (const auto& [k, _] : b.calls_avg)
        roles.insert(k);
    for (const auto& k : roles) {
        double va = a.calls_avg.count(k) ? a.calls_avg.at(k) : 0.0;
        double vb = b.calls_avg.count(k) ? b.calls_avg.at(k) : 0.0;
        c.calls_avg.push_back({k, va, vb, vb - va});
    }
    c.calls_avg.push_back({"decompositions", a.decompositions_avg, b.decompositions_avg,
                           b.decompositions_avg - a.decompositions_avg});
    return c;
}

std::string render_comparison_markdown(const Comparison& c)
{
    std::ostringstream o;
    o << "A: " << c.label_a << "\nB: " << c.label_b << "\n\n";
    o << "| Type | A | B | B - A |\n|---|---:|---:|---:|\n";
    for (const auto& r : c.accuracy)
        o << "| " << r.key << " | " << fmt(r.a) << " | " << fmt(r.b) << " | " << fmt(r.delta) << " |\n";
    o << "\n| Calls per task | A | B | B - A |\n|---|---:|---:|---:|\n";
    for (const auto& r : c.calls_avg)
        o << "| " << r.key << " | " << fmt(r.a, 2) << " | " << fmt(r.b, 2) << " | " << fmt(r.delta, 2) << " |\n";
    return o.str();
}

ExitCode exit_code_for(const EvalReport& r, double failure_threshold)
{
    if (r.tasks == 0 || r.failed.empty())
        return ExitCode::Success;
    if (r.failed.size() == r.tasks)
        return ExitCode::AllFailed;
    double frac = static_cast<double>(r.failed.size()) / static_cast<double>(r.tasks);
    return frac > failure_threshold ? ExitCode::PartialFailure : ExitCode::Success;
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content)
{
    std::error_code ec;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out << content;
        if (!out)
            throw IoError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot write " + path.string() + ": " + ec.message());
}

} // namespace vgtree
