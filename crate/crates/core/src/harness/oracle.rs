use crate::follower::{AnswerSource, FollowerError, QueryContext, UserAnswer};

use super::HarnessError;

/// Simulated user: answers from ground-truth labels.
pub fn oracle_answer(current: Option<&str>, neighbour: Option<&str>) -> Result<UserAnswer, HarnessError> {
    match (current, neighbour) {
        (Some(a), Some(b)) => Ok(UserAnswer { same_object: a == b }),
        (None, _) => Err(HarnessError::MissingLabel("query sequence".into())),
        (_, None) => Err(HarnessError::MissingLabel("neighbour sequence".into())),
    }
}

/// [`AnswerSource`] backed by [`oracle_answer`]. Counts the queries it served.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle {
    pub queries: u64,
}

impl AnswerSource for Oracle {
    fn ask(&mut self, ctx: &QueryContext<'_>) -> Result<Option<UserAnswer>, FollowerError> {
        self.queries += 1;
        oracle_answer(ctx.sequence_true_object, ctx.neighbour.true_object.as_deref())
            .map(Some)
            .map_err(|e| FollowerError::AnswerSource(format!("{e} ({})", ctx.query.sequence_id)))
    }
}
