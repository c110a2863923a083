// Command-line front end: training, offline and streaming decoding, scoring
// and the numerical self-checks.
//
// Failures print one JSON object on stderr,
//   {"error": "<category>", "message": "..."}
// and exit with the category's code (see synct/error.hpp); usage errors exit
// with 2 and category "usage".

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "checks.hpp"
#include "json.hpp"
#include "synct/synct.hpp"

using namespace synct;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::size_t width = 0;
  std::size_t overlap = 0;
  bool greedy = false;
  double realtime = 0;
  std::size_t fragment = 0;
};

RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    c.model.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  return c;
}

void print_line(const json& j) {
  std::cout << j.dump() << '\n' << std::flush;
}

std::string checkpoint_path(const Options& o, const RunConfig& c) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  if (!c.train.checkpoint_path.empty()) return c.train.checkpoint_path;
  fail(ErrorCode::kConfig, "no checkpoint given (--checkpoint or train.checkpoint_path)");
}

// Manifest data when --manifest is given, otherwise the synthetic held-out
// stream described by the config.
std::vector<Sample<double>> eval_data(const Options& o, const RunConfig& c, const Vocabulary& v) {
  if (!o.manifest.empty()) return load_dataset<double>(o.manifest, v, c.data.frame_shift_ms);
  return SyntheticTask(c.synthetic).generate<double>(c.data.eval_samples, 1);
}

double greedy_cer(const SyncTransformer<double>& m, const std::vector<Sample<double>>& data,
                  std::size_t cap) {
  CerAccumulator acc;
  for (const auto& s : data) acc.add(greedy_decode(m, s.features, cap).symbols, s.labels);
  return acc.rate();
}

int run_train(const Options& o) {
  const RunConfig c = load_config(o);
  const std::string ckpt = checkpoint_path(o, c);
  SyntheticTask task(c.synthetic);
  const Vocabulary vocab = Vocabulary::synthetic(c.model.vocab_size);
  std::vector<Sample<double>> train_set;
  std::vector<Sample<double>> held_out;
  if (!o.manifest.empty()) {
    train_set = load_dataset<double>(o.manifest, vocab, c.data.frame_shift_ms);
    held_out = task.generate<double>(c.data.eval_samples, 1);
  } else {
    train_set = task.generate<double>(c.data.train_samples, 0);
    held_out = task.generate<double>(c.data.eval_samples, 1);
  }
  if (train_set.empty()) fail(ErrorCode::kEmptyInput, "training set is empty");
  if (!o.out.empty()) {
    write_dataset(o.out + "/train", train_set, vocab);
    write_dataset(o.out + "/eval", held_out, vocab);
  }

  std::optional<Checkpoint<double>> resume;
  if (std::filesystem::exists(ckpt)) {
    resume = load_checkpoint<double>(ckpt);
    if (!(resume->config == c.model)) {
      fail(ErrorCode::kConfig, "existing checkpoint '" + ckpt + "' has a different model config");
    }
  }
  SyncTransformer<double> model = resume ? resume->model() : SyncTransformer<double>(c.model, vocab);
  Trainer<double> trainer(model, c.train);
  if (resume && resume->optimizer) trainer.set_optimizer_state(*resume->optimizer);
  print_line({{"event", "start"}, {"step", trainer.step()}, {"parameters", model.params().count()},
              {"train_samples", train_set.size()}, {"resumed", resume.has_value()}});

  const auto start = std::chrono::steady_clock::now();
  double loss_sum = 0;
  std::size_t loss_count = 0;
  trainer.run(train_set, c.train.total_steps, [&](std::size_t step, const StepReport& r) {
    loss_sum += r.loss_per_symbol;
    ++loss_count;
    const bool eval = c.train.eval_interval && step % c.train.eval_interval == 0;
    if (eval || step == c.train.total_steps) {
      save_checkpoint(ckpt, model, &trainer.optimizer_state());
      json line{{"event", "eval"},
                {"step", step},
                {"loss_per_symbol", loss_sum / static_cast<double>(loss_count)},
                {"grad_norm", r.grad_norm},
                {"lr", r.learning_rate},
                {"greedy_cer", greedy_cer(model, held_out, c.beam.max_symbols_per_chunk)},
                {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
      print_line(line);
      loss_sum = 0;
      loss_count = 0;
    }
  });
  save_checkpoint(ckpt, model, &trainer.optimizer_state());
  print_line({{"event", "done"}, {"step", trainer.step()}, {"checkpoint", ckpt}});
  return 0;
}

int run_decode(const Options& o) {
  const RunConfig c = load_config(o);
  const auto ck = load_checkpoint<double>(checkpoint_path(o, c));
  const auto model = ck.model();
  const auto data = eval_data(o, c, ck.vocab);
  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::trunc);
    if (!file) fail(ErrorCode::kIo, "cannot open '" + o.out + "' for writing");
  }
  std::ostream& out = o.out.empty() ? std::cout : file;
  for (const auto& s : data) {
    LabelSequence hyp;
    double log_prob = 0;
    if (o.greedy) {
      const auto r = greedy_decode(model, s.features, c.beam.max_symbols_per_chunk);
      hyp = r.symbols;
      log_prob = r.log_prob;
    } else {
      const auto best = beam_decode(model, s.features, c.beam).front();
      hyp = best.prefix;
      log_prob = best.log_prob;
    }
    out << s.id << '\t' << ck.vocab.decode(hyp) << '\t' << log_prob << '\n';
  }
  return 0;
}

int run_eval_cer(const Options& o) {
  const RunConfig c = load_config(o);
  const auto ck = load_checkpoint<double>(checkpoint_path(o, c));
  const auto model = ck.model();
  const auto data = eval_data(o, c, ck.vocab);
  CerAccumulator greedy;
  CerAccumulator beam;
  for (const auto& s : data) {
    greedy.add(greedy_decode(model, s.features, c.beam.max_symbols_per_chunk).symbols, s.labels);
    beam.add(beam_decode(model, s.features, c.beam).front().prefix, s.labels);
  }
  print_line({{"utterances", data.size()},
              {"greedy_cer", greedy.rate()},
              {"beam_cer", beam.rate()},
              {"beam_width", c.beam.width}});
  return 0;
}

// Feeds each utterance in fixed-size fragments, optionally paced at the
// frame rate, and prints every emission as it happens.
int run_stream_demo(const Options& o) {
  const RunConfig c = load_config(o);
  const auto ck = load_checkpoint<double>(checkpoint_path(o, c));
  const auto model = ck.model();
  auto data = eval_data(o, c, ck.vocab);
  if (o.manifest.empty() && data.size() > 5) data.resize(5);
  const std::size_t fragment = o.fragment ? o.fragment : 4;
  for (const auto& s : data) {
    StreamDecoder<double> dec(model, c.beam);
    auto print = [&](const std::vector<Emission>& es, std::size_t frames_in) {
      for (const Emission& e : es)
        print_line({{"utterance", s.id},
                    {"symbol", ck.vocab.symbol(e.symbol)},
                    {"chunk", e.chunk_index},
                    {"frames_received", frames_in},
                    {"audio_ms", static_cast<double>(frames_in) * c.data.frame_shift_ms},
                    {"wall_ms", e.wall_clock_ms}});
    };
    for (std::size_t t = 0; t < s.features.frames(); t += fragment) {
      const std::size_t end = std::min(s.features.frames(), t + fragment);
      if (o.realtime > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(
            static_cast<double>(end - t) * c.data.frame_shift_ms / o.realtime));
      }
      print(dec.push(s.features.slice(t, end)), end);
    }
    print(dec.finish(), s.features.frames());
    print_line({{"utterance", s.id},
                {"final", ck.vocab.decode(dec.best().prefix)},
                {"reference", ck.vocab.decode(s.labels)},
                {"log_prob", dec.best().log_prob}});
  }
  return 0;
}

int report(const std::vector<checks::Result>& results) {
  bool all = true;
  for (const auto& r : results) {
    all = all && r.ok;
    std::printf("%s  %s: max deviation %.3g (bound %.3g), %.2f s; %s\n", r.ok ? "PASS" : "FAIL",
                r.name.c_str(), r.deviation, r.bound, r.seconds, r.detail.c_str());
  }
  return all ? 0 : 1;
}

int run_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(3);
  return report({checks::lattice_gradcheck(seed), checks::model_gradcheck(seed + 1)});
}

int run_oracle_check(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(1);
  const RunConfig c = load_config(o);
  const SyncTransformer<double> model(c.model, Vocabulary::synthetic(c.model.vocab_size));
  return report({checks::lattice_oracle(seed), checks::diagonal_identity(seed + 1),
                 checks::chunk_count(seed + 2), checks::causality(model, seed + 3, 2)});
}

int run_latency(const Options& o, bool width_given, bool overlap_given) {
  const RunConfig c = load_config(o);
  const std::size_t w = width_given ? o.width : c.model.chunk_width;
  const std::size_t b = overlap_given ? o.overlap : c.model.chunk_overlap;
  const std::size_t down = FrontEndGeometry{}.downsample();
  print_line({{"chunk_width", w},
              {"chunk_overlap", b},
              {"downsample", down},
              {"frame_shift_ms", c.data.frame_shift_ms},
              {"chunk_latency_ms", chunk_latency_ms(w, down, c.data.frame_shift_ms)},
              {"effective_latency_ms", effective_latency_ms(w, b, down, c.data.frame_shift_ms)}});
  return 0;
}

void error_line(std::string_view category, const std::string& message) {
  std::cerr << json{{"error", category}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synchronous transformer streaming ASR"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", seed, "Overrides model and training seeds");
  };
  auto* train = app.add_subcommand("train", "Train on the synthetic task or a manifest");
  auto* decode = app.add_subcommand("decode", "Offline decoding to TSV");
  auto* stream = app.add_subcommand("stream-demo", "Streaming decoding with incremental output");
  auto* eval = app.add_subcommand("eval-cer", "Greedy and beam CER");
  auto* grad = app.add_subcommand("gradcheck", "Analytic gradients against finite differences");
  auto* oracle = app.add_subcommand("oracle-check", "Lattice, chunking and causality oracles");
  auto* latency = app.add_subcommand("latency", "Chunk latency arithmetic");
  for (auto* sub : {train, decode, stream, eval, grad, oracle, latency}) common(sub);
  for (auto* sub : {train, decode, stream, eval}) {
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    sub->add_option("--manifest", o.manifest, "TSV of <feature file>\\t<transcript>");
  }
  train->add_option("--out", o.out, "Directory for the generated train/eval datasets");
  decode->add_option("--out", o.out, "Hypothesis TSV (default stdout)");
  decode->add_flag("--greedy", o.greedy, "Greedy instead of beam search");
  stream->add_option("--fragment", o.fragment, "Frames per pushed fragment (default 4)");
  stream->add_option("--realtime", o.realtime, "Pace input at this multiple of real time");
  auto* width_opt = latency->add_option("--width", o.width, "Chunk width W in encoded frames");
  auto* overlap_opt = latency->add_option("--overlap", o.overlap, "Chunk overlap B");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    return 2;
  }

  try {
    for (auto* sub : app.get_subcommands()) {
      if (sub->count("--seed")) o.seed = seed;
    }
    if (*train) return run_train(o);
    if (*decode) return run_decode(o);
    if (*stream) return run_stream_demo(o);
    if (*eval) return run_eval_cer(o);
    if (*grad) return run_gradcheck(o);
    if (*oracle) return run_oracle_check(o);
    if (*latency) return run_latency(o, width_opt->count() > 0, overlap_opt->count() > 0);
  } catch (const Error& e) {
    error_line(e.category(), e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    error_line("internal", e.what());
    return 1;
  }
  return 0;
}
