#include "stacklab/corpus_gen.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "stacklab/rng.hpp"
#include "stacklab/tensor.hpp"

namespace stacklab {

namespace {

const std::vector<std::string> kNouns = {
    "river",  "stone",  "ladder", "garden", "window", "basket", "candle", "bridge",
    "forest", "meadow", "lantern", "harbor", "pencil", "bottle", "engine", "saddle",
    "mirror", "barrel", "carpet", "anchor", "hammer", "kettle", "marble", "ribbon",
    "shovel", "teapot", "tunnel", "wagon",  "whistle", "cabin",  "canvas", "copper",
    "drawer", "fencer", "grain",  "hollow", "island", "jacket", "kernel", "ledge"};

const std::vector<std::string> kVerbs = {
    "carried", "watched", "crossed", "painted", "mended",  "counted", "followed",
    "covered", "lifted",  "traded",  "gathered", "opened",  "sorted",  "measured",
    "stacked", "cleaned", "borrowed", "guarded", "weighed", "repaired", "signaled",
    "wrapped", "hauled",  "charted"};

const std::vector<std::string> kAdjectives = {
    "quiet",  "narrow", "wooden", "bright", "heavy", "little", "steady", "round",
    "faded",  "gentle", "broad",  "copper", "early", "simple", "rough",  "plain",
    "silver", "warm",   "pale",   "deep"};

const std::vector<std::string> kAdverbs = {"slowly",   "often",    "rarely",  "quickly",
                                           "together", "upstream", "twice",   "halfway",
                                           "outside",  "nearby",   "steadily", "again"};

const std::vector<std::string> kPlaces = {
    "the market", "the shore",   "the old mill", "the station", "the orchard",
    "the valley", "the village", "the workshop", "the harbor",  "the east field",
    "the cellar", "the crossing"};

const std::vector<std::string> kNames = {"Ada",  "Bruno", "Clara", "Dmitri", "Elena", "Felix",
                                         "Greta", "Hugo",  "Iris",  "Jonas",  "Karin", "Leon",
                                         "Mara",  "Nils",  "Odile", "Petra"};

// Skewed index so a handful of words dominate, as in natural text.
size_t zipfish(Rng& rng, size_t n) {
  const double u = rng.next_double();
  size_t i = static_cast<size_t>(static_cast<double>(n) * u * u);
  return i >= n ? n - 1 : i;
}

const std::string& pick(Rng& rng, const std::vector<std::string>& words) {
  return words[zipfish(rng, words.size())];
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string sentence(Rng& rng) {
  std::string out;
  switch (rng.next_below(6)) {
    case 0:
      out = capitalize("the " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) + " " +
                       pick(rng, kVerbs) + " the " + pick(rng, kNouns) + " near " +
                       pick(rng, kPlaces) + ".");
      break;
    case 1:
      out = pick(rng, kNames) + " " + pick(rng, kVerbs) + " the " + pick(rng, kNouns) + " " +
            pick(rng, kAdverbs) + ".";
      break;
    case 2:
      out = capitalize(pick(rng, kAdverbs) + ", the " + pick(rng, kNouns) + " by " +
                       pick(rng, kPlaces) + " stayed " + pick(rng, kAdjectives) + ".");
      break;
    case 3: {
      const int n = rng.next_int(2, 99);
      out = pick(rng, kNames) + " counted " + std::to_string(n) + " " + pick(rng, kNouns) +
            "s at " + pick(rng, kPlaces) + ".";
      break;
    }
    case 4: {
      const int a = rng.next_int(2, 40);
      const int b = rng.next_int(2, 40);
      out = capitalize("a crate of " + std::to_string(a) + " " + pick(rng, kNouns) +
                       "s weighed more than " + std::to_string(b) + " " + pick(rng, kNouns) +
                       "s.");
      break;
    }
    default:
      out = capitalize("the " + pick(rng, kNouns) + " " + pick(rng, kVerbs) + " " +
                       pick(rng, kAdverbs) + " while " + pick(rng, kNames) + " " +
                       pick(rng, kVerbs) + " the " + pick(rng, kAdjectives) + " " +
                       pick(rng, kNouns) + ".");
      break;
  }
  return out;
}

}  // namespace

std::string generate_demo_corpus(uint64_t seed, size_t min_bytes) {
  if (min_bytes < 64) throw Error("corpus generator: min_bytes too small");
  Rng rng(seed);
  std::string out;
  out.reserve(min_bytes + 1024);
  while (out.size() < min_bytes) {
    const int n_sentences = rng.next_int(3, 7);
    for (int i = 0; i < n_sentences; ++i) {
      if (i) out.push_back(' ');
      out += sentence(rng);
    }
    out += "\n\n";
  }
  out.pop_back();  // single trailing newline
  return out;
}

void write_demo_corpus(const std::string& path, uint64_t seed, size_t min_bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open corpus file for writing: " + path);
  const std::string text = generate_demo_corpus(seed, min_bytes);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("failed while writing corpus file: " + path);
}

}  // namespace stacklab
