//! Crew procedures: long-shot extension, shot length from voice-over,
//! emotion tagging and the final edit timeline.

use crewflow::crew::{assign_emotions, build_edit_timeline, plan_long_shot, shot_length_from_voiceover, EmotionRules};

fn main() {
    let plan = plan_long_shot(60, 10).unwrap();
    println!("60 frames from 10-frame segments: {} segments, {} frames", plan.segments.len(), plan.total_frames());
    for (i, s) in plan.segments.iter().enumerate() {
        println!("  #{i} {:?} {:>2} frames from {:?}", s.direction, s.length, s.keyframe_source);
    }
    println!("  last frame anchored at {:?}", plan.terminal_anchor());

    for seconds in [2.5, 4.0, 7.3] {
        println!("{seconds}s of voice at 24 fps -> {} frames", shot_length_from_voiceover(seconds, 24).unwrap());
    }

    let lines = ["How dare you come back!", "Psst, over here.", "No way, it worked?", "The rain stopped."];
    let rules = EmotionRules::from_table(EmotionRules::default_rules());
    for tag in assign_emotions(&lines, &rules) {
        println!("{:<32} {}", lines[tag.line_index], tag.emotion);
    }

    let scenes = vec![("s1".to_owned(), 6.0), ("s2".to_owned(), 4.5), ("s3".to_owned(), 8.0)];
    let timeline = build_edit_timeline(&scenes, 1.0, vec!["voice-a".into(), "voice-b".into()], "theme").unwrap();
    println!("timeline of {} scenes runs {:.1}s", timeline.entries.len(), timeline.total_duration());
}
