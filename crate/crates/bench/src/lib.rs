//! Synthetic inputs shared by the benchmarks.

use crs_core::{Corpus, CorpusHeader, Dialogue, Goal, KnowledgeBase, KnowledgeTriple, Split, Turn};

/// `n_entities` stars, each with a profile relation and `films_per_star`
/// films.
pub fn synthetic_kb(n_entities: usize, films_per_star: usize) -> KnowledgeBase {
    let mut rows = Vec::new();
    for e in 0..n_entities {
        rows.push(format!("Star {e:04}\tzodiac sign\tSign {}", e % 12));
        for f in 0..films_per_star {
            rows.push(format!("Star {e:04}\tstars in\tFilm {e:04}-{f:03}"));
        }
    }
    KnowledgeBase::load(&rows.join("\n")).expect("synthetic rows are valid")
}

/// Dialogues whose system turns are labelled by the keyword in the user turn.
pub fn goal_corpus(n_dialogues: usize, turns_per_dialogue: usize) -> Corpus {
    let goals = ["Chit-chat", "Movie recommendation", "Ask about weather", "Say goodbye"];
    let cues = ["hello", "film", "rain", "bye"];
    let dialogues = (0..n_dialogues)
        .map(|d| {
            let mut turns = Vec::new();
            for t in 0..turns_per_dialogue {
                let g = (d + t) % goals.len();
                turns.push(Turn::user(format!("{} please {d} {t}", cues[g])));
                turns.push(
                    Turn::system(format!("reply {d} {t}"))
                        .with_goals([goals[g]])
                        .with_knowledge(if g == 1 {
                            vec![KnowledgeTriple::new("Star 0001", "stars in", ["Film 0001-000"]).unwrap()]
                        } else {
                            vec![]
                        }),
                );
            }
            Dialogue {
                id: format!("d{d}"),
                turns,
            }
        })
        .collect();
    let header = CorpusHeader {
        name: "synthetic".into(),
        split: Split::Train,
        goal_inventory: goals.iter().map(|g| Goal::new(*g)).collect(),
    };
    Corpus::new(header, dialogues).expect("synthetic corpus is valid")
}
