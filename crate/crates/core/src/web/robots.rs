/// Allow/Disallow prefixes of the robots.txt group that applies to us.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RobotsRules {
    allow: Vec<String>,
    disallow: Vec<String>,
}

impl RobotsRules {
    /// Picks the group naming `agent_token` if one exists, else the `*` group.
    /// Wildcards inside paths are not supported; such rules are ignored.
    pub fn parse(text: &str, agent_token: &str) -> Self {
        let token = agent_token.to_ascii_lowercase();
        let mut specific: Option<RobotsRules> = None;
        let mut generic: Option<RobotsRules> = None;

        let mut agents: Vec<String> = Vec::new();
        let mut rules = RobotsRules::default();
        let mut in_rules = false;
        let mut flush = |agents: &mut Vec<String>, rules: &mut RobotsRules| {
            for a in agents.iter() {
                if a == "*" {
                    generic.get_or_insert_with(Default::default).extend(rules);
                } else if token.contains(a.as_str()) {
                    specific.get_or_insert_with(Default::default).extend(rules);
                }
            }
            agents.clear();
            *rules = RobotsRules::default();
        };

        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let Some((key, value)) = line.split_once(':') else {
                continue;
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            match key.as_str() {
                "user-agent" => {
                    if in_rules {
                        flush(&mut agents, &mut rules);
                        in_rules = false;
                    }
                    agents.push(value.to_ascii_lowercase());
                }
                "allow" | "disallow" => {
                    in_rules = true;
                    if value.contains('*') || value.contains('$') {
                        continue;
                    }
                    if key == "allow" {
                        rules.allow.push(value.to_string());
                    } else if !value.is_empty() {
                        rules.disallow.push(value.to_string());
                    }
                }
                _ => {}
            }
        }
        flush(&mut agents, &mut rules);
        specific.or(generic).unwrap_or_default()
    }

    fn extend(&mut self, other: &RobotsRules) {
        self.allow.extend(other.allow.iter().cloned());
        self.disallow.extend(other.disallow.iter().cloned());
    }

    /// Longest matching prefix wins; Allow wins ties.
    pub fn allows(&self, path: &str) -> bool {
        let longest = |rules: &[String]| rules.iter().filter(|r| path.starts_with(r.as_str())).map(String::len).max();
        match (longest(&self.allow), longest(&self.disallow)) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(d)) => a >= d,
        }
    }
}
