#include "dlt/textgen.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "dlt/rng.hpp"

namespace dlt {

namespace {

const char* kNouns[] = {
    "love",    "night",   "crown",   "heart",   "storm",    "grave",
    "fortune", "honour",  "sword",   "tongue",  "sorrow",   "music",
    "shadow",  "throne",  "blood",   "moon",    "kingdom",  "letter",
    "garden",  "spirit",  "daughter", "father", "brother",  "tempest",
    "folly",   "beauty",  "reason",  "mercy",   "villain",  "banquet",
    "dagger",  "ghost",   "crown",   "purse",   "ring",     "candle",
    "raven",   "serpent", "rose",    "thorn",   "cliff",    "harbour",
    "vessel",  "anchor",  "feast",   "poison",  "physic",   "fever",
    "dream",   "slumber", "dawn",    "dusk",    "winter",   "summer",
    "orchard", "meadow",  "chapel",  "dungeon", "rampart",  "gallows",
    "jest",    "riddle",  "oath",    "bargain", "ransom",   "treason",
    "herald",  "trumpet", "banner",  "armour",  "visage",   "bosom",
    "marrow",  "sinew",   "ashes",   "embers",  "mirror",   "portrait",
    "sceptre", "garland", "laurel",  "cypress", "willow",   "yew",
};

const char* kAdjectives[] = {
    "sweet",    "noble",   "false",    "gentle",  "cruel",    "fair",
    "mad",      "wretched", "golden",  "bitter",  "brave",    "pale",
    "wild",     "true",    "heavy",    "proud",   "sick",     "honest",
    "foolish",  "weary",   "ancient",  "bloody",  "cunning",  "dread",
    "envious",  "fickle",  "grievous", "hollow",  "jealous",  "lean",
    "mortal",   "perilous", "ragged",  "savage",  "tedious",  "valiant",
    "wanton",   "youthful", "barren",  "crooked", "dismal",   "fruitful",
    "gracious", "haughty", "idle",     "knavish", "lusty",    "monstrous",
};

const char* kVerbs[] = {
    "speaks",  "weeps",   "dreams",  "wanders", "trembles", "sings",
    "mourns",  "rages",   "sleeps",  "waits",   "listens",  "fades",
    "kneels",  "swears",  "laughs",  "bleeds",  "burns",    "withers",
    "dances",  "stumbles", "whispers", "thunders", "lingers", "perishes",
    "prospers", "conspires", "repents", "dissembles",
};

const char* kTransitive[] = {
    "loves",   "fears",    "seeks",    "scorns",   "serves",  "betrays",
    "remembers", "forgets", "pities",  "praises",  "curses",  "follows",
    "crowns",  "banishes", "summons",  "defies",   "cherishes", "devours",
    "haunts",  "mocks",    "pardons",  "ransoms",  "weds",    "buries",
};

const char* kAdverbs[] = {
    "softly",  "swiftly",  "falsely", "bravely",  "bitterly", "gladly",
    "darkly",  "strangely", "meekly", "proudly",  "vainly",   "wisely",
};

const char* kPlaces[] = {
    "Verona",  "Elsinore", "Illyria", "Dunsinane", "Venice",  "Messina",
    "Navarre", "Arden",    "Belmont", "Cyprus",    "Bohemia", "Athens",
};

const char* kExclaims[] = {
    "O",    "Alas", "Fie",   "Hark", "Soft",  "Peace",
    "Nay",  "Marry", "Look", "Why",  "Hence", "Anon",
};

const char* kStageDirections[] = {
    "Enter the DUKE with attendants.",
    "Exit, pursued by a bear.",
    "Flourish of trumpets.",
    "Enter a MESSENGER, in haste.",
    "Thunder and lightning.",
    "They fight.",
    "Exeunt all but the FOOL.",
    "A room in the castle.",
    "Enter two MURDERERS.",
    "Music plays within.",
    "Alarum. Excursions.",
    "Enter the GHOST, armed.",
    "Drums afar off.",
    "They drink.",
    "Re-enter OTHERS, with torches.",
};

// Genuine public-domain lines mixed in so the byte statistics stay close to
// period English.
const char* kQuotations[] = {
    "To be, or not to be, that is the question.",
    "All the world's a stage, and all the men and women merely players.",
    "Now is the winter of our discontent made glorious summer by this sun of York.",
    "If music be the food of love, play on.",
    "The quality of mercy is not strained; it droppeth as the gentle rain from heaven.",
    "Cowards die many times before their deaths; the valiant never taste of death but once.",
    "Tomorrow, and tomorrow, and tomorrow, creeps in this petty pace from day to day.",
    "Shall I compare thee to a summer's day? Thou art more lovely and more temperate.",
    "Some are born great, some achieve greatness, and some have greatness thrust upon them.",
    "What's in a name? That which we call a rose by any other name would smell as sweet.",
    "Friends, Romans, countrymen, lend me your ears.",
    "The fault, dear Brutus, is not in our stars, but in ourselves.",
    "Lord, what fools these mortals be!",
    "Better three hours too soon than a minute too late.",
    "There are more things in heaven and earth, Horatio, than are dreamt of in your philosophy.",
    "Uneasy lies the head that wears a crown.",
    "Et tu, Brute? Then fall, Caesar.",
    "The lady doth protest too much, methinks.",
    "Once more unto the breach, dear friends, once more.",
    "A horse! a horse! my kingdom for a horse!",
};

const char* kOnsets[] = {"B",  "Br", "C",  "Cl", "D",  "F",  "Fl", "G",
                         "Gr", "H",  "L",  "M",  "N",  "P",  "Pr", "R",
                         "S",  "T",  "Tr", "V",  "W"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "au", "ea", "io"};
const char* kCodas[] = {"n",   "s",   "th",  "l",   "r",   "nd",
                        "st",  "m",   "rt",  "ld",  "ss",  "nt"};

template <std::size_t N>
const char* pick(const char* const (&arr)[N], Rng& rng) {
  return arr[rng.below(N)];
}

// Invented proper names keep the byte stream from collapsing into a small
// closed vocabulary.
std::string invent_name(Rng& rng, bool upper) {
  std::string name;
  const int syllables = 2 + static_cast<int>(rng.below(2));
  for (int i = 0; i < syllables; ++i) {
    name += kOnsets[rng.below(std::size(kOnsets))];
    name += kVowels[rng.below(std::size(kVowels))];
    if (rng.below(2) == 0) name += kCodas[rng.below(std::size(kCodas))];
  }
  if (name.size() > 1) {
    for (std::size_t i = 1; i < name.size(); ++i)
      name[i] = char(std::tolower(static_cast<unsigned char>(name[i])));
  }
  if (upper)
    for (auto& c : name) c = char(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

struct SceneCast {
  std::vector<std::string> speakers;
  std::vector<std::string> names;  // referenced in dialogue
};

std::string noun_phrase(Rng& rng, const SceneCast& cast) {
  switch (rng.below(6)) {
    case 0:
      return std::string("the ") + pick(kAdjectives, rng) + " " + pick(kNouns, rng);
    case 1:
      return std::string("my ") + pick(kNouns, rng);
    case 2:
      return std::string("thy ") + pick(kAdjectives, rng) + " " + pick(kNouns, rng);
    case 3:
      return cast.names[rng.below(cast.names.size())] + "'s " + pick(kNouns, rng);
    case 4:
      return std::string("a ") + pick(kNouns, rng) + " of " + pick(kPlaces, rng);
    default:
      return std::string("the ") + pick(kNouns, rng) + " of " + pick(kNouns, rng);
  }
}

std::string sentence(Rng& rng, const SceneCast& cast) {
  const std::string np1 = noun_phrase(rng, cast);
  const std::string np2 = noun_phrase(rng, cast);
  switch (rng.below(12)) {
    case 0:
      return std::string(pick(kExclaims, rng)) + ", what " + pick(kAdjectives, rng) +
             " " + pick(kNouns, rng) + " is this that " + pick(kVerbs, rng) +
             " within " + np1 + "?";
    case 1:
      return np1 + " " + pick(kTransitive, rng) + " " + np2 + ", and " +
             pick(kAdverbs, rng) + " " + pick(kVerbs, rng) + ".";
    case 2:
      return std::string("Methinks ") + np1 + " " + pick(kVerbs, rng) +
             " like " + np2 + " upon " + noun_phrase(rng, cast) + ".";
    case 3:
      return std::string("Wouldst thou have ") + pick(kNouns, rng) +
             " without " + pick(kNouns, rng) + ", or a " + pick(kAdjectives, rng) +
             " " + pick(kNouns, rng) + " that never " + pick(kVerbs, rng) + "?";
    case 4:
      return std::string("I have known ") + np1 + " that " +
             pick(kTransitive, rng) + " its own " + pick(kNouns, rng) +
             ", and yet it " + pick(kVerbs, rng) + " still.";
    case 5:
      return std::string("Let ") + np1 + " be " + pick(kAdjectives, rng) +
             ", for " + np2 + " " + pick(kVerbs, rng) + " ere the " +
             pick(kNouns, rng) + " wakes.";
    case 6:
      return std::string("When ") + np1 + " " + pick(kVerbs, rng) + " in " +
             pick(kPlaces, rng) + ", then shall " + np2 + " " +
             pick(kVerbs, rng) + " " + pick(kAdverbs, rng) + ".";
    case 7:
      return cast.names[rng.below(cast.names.size())] + ", thou " +
             pick(kAdjectives, rng) + " " + pick(kNouns, rng) + ", " +
             pick(kVerbs, rng) + " no more; " + np1 + " " +
             pick(kTransitive, rng) + " thee.";
    case 8:
      return std::string("'Tis not ") + np1 + " that " + pick(kTransitive, rng) +
             " " + np2 + ", but " + noun_phrase(rng, cast) + " that " +
             pick(kAdverbs, rng) + " " + pick(kVerbs, rng) + ".";
    case 9:
      return std::string("Swear by ") + np1 + ", and by " + np2 + ", that " +
             pick(kNouns, rng) + " shall trouble " + pick(kPlaces, rng) +
             " no more.";
    case 10:
      return std::string("Hath not ") + np1 + " " + pick(kNouns, rng) +
             "? hath it not " + pick(kNouns, rng) + ", " + pick(kNouns, rng) +
             ", " + pick(kNouns, rng) + "?";
    default:
      return std::string("So ") + pick(kAdverbs, rng) + " " +
             pick(kVerbs, rng) + " " + np1 + " that " + np2 +
             " dare not stir.";
  }
}

std::string speech(Rng& rng, const SceneCast& cast) {
  std::string out;
  out += cast.speakers[rng.below(cast.speakers.size())];
  out += ":\n";
  const int lines = 1 + static_cast<int>(rng.below(4));
  for (int i = 0; i < lines; ++i) {
    if (rng.below(14) == 0) {
      out += kQuotations[rng.below(std::size(kQuotations))];
    } else {
      out += sentence(rng, cast);
    }
    out += "\n";
  }
  out += "\n";
  return out;
}

const char* kRomans[] = {"I", "II", "III", "IV", "V", "VI", "VII"};

}  // namespace

std::string generate_play_text(std::size_t min_bytes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7e47));
  std::string out;
  out.reserve(min_bytes + 4096);
  int act = 0;
  while (out.size() < min_bytes) {
    out += "ACT ";
    out += kRomans[act % std::size(kRomans)];
    ++act;
    out += ".\n\n";
    const int scenes = 2 + static_cast<int>(rng.below(3));
    for (int sc = 0; sc < scenes && out.size() < min_bytes; ++sc) {
      // every scene draws a fresh cast of invented names
      SceneCast cast;
      const int n_speakers = 3 + static_cast<int>(rng.below(4));
      for (int i = 0; i < n_speakers; ++i)
        cast.speakers.push_back(invent_name(rng, true));
      const int n_names = 2 + static_cast<int>(rng.below(3));
      for (int i = 0; i < n_names; ++i) cast.names.push_back(invent_name(rng, false));

      out += "SCENE ";
      out += kRomans[rng.below(std::size(kRomans))];
      out += ". ";
      out += pick(kStageDirections, rng);
      out += "\n\n";
      const int speeches = 6 + static_cast<int>(rng.below(8));
      for (int sp = 0; sp < speeches && out.size() < min_bytes; ++sp) {
        if (rng.below(10) == 0) {
          out += "[";
          out += pick(kStageDirections, rng);
          out += "]\n\n";
        }
        out += speech(rng, cast);
      }
    }
  }
  return out;
}

void write_corpus_file(const std::string& path, std::size_t min_bytes,
                       std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_corpus_file: cannot open " + path);
  const std::string text = generate_play_text(min_bytes, seed);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write_corpus_file: write failed for " + path);
}

}  // namespace dlt
