use std::sync::Mutex;

use super::{ChatBackend, ChatExchange, ChatReply, GatewayError, Message};

/// Answers the n-th call with the n-th recorded exchange.
#[derive(Debug)]
pub struct ReplayBackend {
    exchanges: Vec<ChatExchange>,
    model_id: String,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(exchanges: Vec<ChatExchange>) -> Result<Self, GatewayError> {
        let first = exchanges
            .first()
            .ok_or(GatewayError::Config("cannot replay an empty transcript".into()))?;
        let model_id = first.response.model_id.clone();
        Ok(ReplayBackend { exchanges, model_id, cursor: Mutex::new(0) })
    }

    pub fn served(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - self.served()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, messages: &[Message]) -> Result<ChatReply, GatewayError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let ex = self
            .exchanges
            .get(*cursor)
            .ok_or(GatewayError::TranscriptExhausted { served: *cursor })?;
        *cursor += 1;
        if ex.request_messages != messages {
            tracing::warn!(position = *cursor - 1, "replayed request differs from the recorded one");
        }
        match &ex.error {
            Some(e) => Err(GatewayError::Replayed(e.clone())),
            None => Ok(ChatReply { response: ex.response.clone(), usage: ex.usage }),
        }
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{chat, RuleBackend, Session};

    fn two_exchanges() -> Vec<ChatExchange> {
        let b = RuleBackend::new("m").rule("one", "1").rule("two", "2");
        let mut s = Session::new(&b, None);
        s.ask("one").unwrap();
        s.ask("two").unwrap();
        s.into_exchanges()
    }

    #[test]
    fn answers_in_order_then_exhausts() {
        let r = ReplayBackend::new(two_exchanges()).unwrap();
        assert_eq!(chat(&r, &[Message::user("one")]).unwrap().text, "1");
        assert_eq!(chat(&r, &[Message::user("two")]).unwrap().text, "2");
        assert_eq!(
            chat(&r, &[Message::user("three")]),
            Err(GatewayError::TranscriptExhausted { served: 2 })
        );
        assert_eq!(r.model_id(), "m");
    }

    #[test]
    fn empty_transcript_rejected() {
        assert!(ReplayBackend::new(vec![]).is_err());
    }

    #[test]
    fn recorded_failures_replay_as_errors() {
        let mut ex = two_exchanges();
        ex[0].error = Some("request timed out".into());
        let r = ReplayBackend::new(ex).unwrap();
        assert_eq!(
            chat(&r, &[Message::user("one")]),
            Err(GatewayError::Replayed("request timed out".into()))
        );
    }
}
