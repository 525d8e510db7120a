//! Small synthetic corpus in the SGD on-disk format.
//!
//! Dialogues are scripted from a handful of templates over four services and
//! exercise every value source the tracker knows about: user mentions,
//! `dontcare`, accepted system offers (same turn and earlier turns) and values
//! carried over from another service. Generation is a pure function of the
//! seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    dialogues_to_json, Action, Dialogue, DialogueState, Frame, Intent, Schema, Service, Slot, SlotSpan, Speaker, Turn,
    DONTCARE,
};
use crate::error::Result;

pub const HOMES: &str = "Homes_1";
pub const RESTAURANTS: &str = "Restaurants_2";
pub const RIDES: &str = "RideSharing_2";
/// Only appears in the dev and test splits.
pub const HOTELS: &str = "Hotels_2";

fn slot(name: &str, description: &str, values: &[&str]) -> Slot {
    Slot {
        name: name.to_string(),
        description: description.to_string(),
        is_categorical: !values.is_empty(),
        possible_values: values.iter().map(|v| v.to_string()).collect(),
    }
}

fn intent(name: &str, description: &str, required: &[&str], optional: &[&str]) -> Intent {
    Intent {
        name: name.to_string(),
        description: description.to_string(),
        required_slots: required.iter().map(|s| s.to_string()).collect(),
        optional_slots: optional.iter().map(|s| s.to_string()).collect(),
    }
}

fn service(name: &str, description: &str, intents: Vec<Intent>, slots: Vec<Slot>) -> Service {
    let mut all = vec![Intent::none()];
    all.extend(intents);
    Service {
        name: name.to_string(),
        description: description.to_string(),
        intents: all,
        slots,
    }
}

const BOOL: [&str; 2] = ["True", "False"];

pub fn homes_service() -> Service {
    service(
        HOMES,
        "Find an apartment to rent and schedule visits",
        vec![
            intent(
                "FindApartment",
                "Find an apartment in a given area",
                &["area", "number_of_beds"],
                &["number_of_baths", "pets_allowed", "furnished"],
            ),
            intent(
                "ScheduleVisit",
                "Schedule a visit to a property",
                &["property_name", "visit_date"],
                &[],
            ),
        ],
        vec![
            slot("area", "City where the apartment is located", &[]),
            slot("address", "Address of the property", &[]),
            slot("property_name", "Name of the apartment complex", &[]),
            slot("phone_number", "Phone number of the property", &[]),
            slot("furnished", "Whether the apartment is furnished", &BOOL),
            slot("pets_allowed", "Whether pets are allowed", &BOOL),
            slot("rent", "Monthly rent", &[]),
            slot("visit_date", "Date of the visit", &[]),
            slot("number_of_beds", "Number of bedrooms", &["1", "2", "3", "4"]),
            slot("number_of_baths", "Number of bathrooms", &["1", "2", "3"]),
        ],
    )
}

pub fn restaurants_service() -> Service {
    service(
        RESTAURANTS,
        "Find restaurants and reserve a table",
        vec![
            intent(
                "ReserveRestaurant",
                "Reserve a table at a restaurant",
                &["restaurant_name", "city", "time"],
                &["date", "number_of_seats"],
            ),
            intent(
                "FindRestaurants",
                "Find a restaurant by cuisine and city",
                &["city", "cuisine"],
                &["price_range", "has_vegetarian_options"],
            ),
        ],
        vec![
            slot("restaurant_name", "Name of the restaurant", &[]),
            slot("date", "Date of the reservation", &[]),
            slot("time", "Time of the reservation", &[]),
            slot("has_vegetarian_options", "Whether vegetarian food is served", &BOOL),
            slot("phone_number", "Phone number of the restaurant", &[]),
            slot("rating", "Average user rating", &[]),
            slot("address", "Street address of the restaurant", &[]),
            slot(
                "number_of_seats",
                "Number of people in the party",
                &["1", "2", "3", "4", "5", "6"],
            ),
            slot("price_range", "Price range", &["cheap", "moderate", "pricey"]),
            slot("city", "City of the restaurant", &[]),
            slot("cuisine", "Type of food", &[]),
        ],
    )
}

pub fn rides_service() -> Service {
    service(
        RIDES,
        "Book a cab to a destination",
        vec![intent(
            "GetRide",
            "Book a cab",
            &["destination", "number_of_riders", "shared_ride"],
            &[],
        )],
        vec![
            slot("destination", "Address of the destination", &[]),
            slot("shared_ride", "Whether the ride is shared", &BOOL),
            slot("ride_fare", "Total fare", &[]),
            slot("approximate_ride_duration", "Ride duration in minutes", &[]),
            slot("number_of_riders", "Number of passengers", &["1", "2", "3", "4"]),
        ],
    )
}

pub fn hotels_service() -> Service {
    service(
        HOTELS,
        "Find and book a house to stay in",
        vec![
            intent(
                "SearchHouse",
                "Search for a house",
                &["where_to"],
                &["number_of_adults", "has_laundry_service"],
            ),
            intent(
                "BookHouse",
                "Book a house",
                &["where_to", "number_of_adults", "check_in_date", "check_out_date"],
                &[],
            ),
        ],
        vec![
            slot("where_to", "City of the house", &[]),
            slot("number_of_adults", "Number of guests", &["1", "2", "3", "4"]),
            slot("check_in_date", "Arrival date", &[]),
            slot("check_out_date", "Departure date", &[]),
            slot("has_laundry_service", "Whether laundry is available", &BOOL),
            slot("address", "Address of the house", &[]),
            slot("rating", "Review rating", &[]),
        ],
    )
}

/// Schema of the train split.
pub fn train_schema() -> Schema {
    schema_of(vec![homes_service(), restaurants_service(), rides_service()])
}

/// Schema of the dev and test splits (adds the unseen hotel service).
pub fn eval_schema() -> Schema {
    schema_of(vec![
        homes_service(),
        restaurants_service(),
        rides_service(),
        hotels_service(),
    ])
}

fn schema_of(services: Vec<Service>) -> Schema {
    Schema {
        services: services.into_iter().map(|s| (s.name.clone(), s)).collect(),
    }
}

const AREAS: &[&str] = &[
    "San Jose",
    "Palo Alto",
    "Oakland",
    "Berkeley",
    "Fremont",
    "Sunnyvale",
    "Santa Rosa",
    "Napa",
    "Livermore",
    "Mountain View",
    "Walnut Creek",
    "Santa Clara",
];
const CUISINES: &[&str] = &[
    "Italian", "Mexican", "Chinese", "Thai", "Indian", "Sushi", "Seafood", "Greek", "Korean", "Burger",
];
const RESTAURANT_NAMES: &[&str] = &[
    "World Gourmet",
    "Sakoon",
    "La Costanera",
    "Bistro Vida",
    "Golden Dragon",
    "Taqueria Lolita",
    "Pasta Moon",
    "Thai Orchid",
    "Saravana Bhavan",
    "Ocean Grill",
    "Kokkari",
    "Jang Su Jang",
    "Nopa",
    "Mama Mia",
];
const PROPERTIES: &[&str] = &[
    "Acacia Lakes Apartments",
    "Bristol Apartments",
    "Park Place",
    "Hillside Gardens",
    "Marina Cove",
    "Oak Ridge Commons",
    "Riverwalk Lofts",
    "Cedar Point",
];
const STREETS: &[&str] = &[
    "Lincoln Avenue",
    "Castro Street",
    "Market Street",
    "Shattuck Avenue",
    "University Avenue",
    "Broadway",
    "El Camino Real",
    "Mission Boulevard",
];
const DATES: &[&str] = &[
    "March 2nd",
    "March 8th",
    "next Friday",
    "the 13th",
    "tomorrow",
    "day after tomorrow",
    "this Sunday",
    "March 11th",
    "the 4th",
];
/// (spoken form, other accepted surface forms)
const TIMES: &[(&str, &[&str])] = &[
    ("six in the evening", &["6 pm", "18:00"]),
    ("7:30 pm", &["half past 7 in the evening", "19:30"]),
    ("noon", &["12 pm", "12:00"]),
    ("5:15 pm", &["17:15"]),
    ("eight pm", &["8 pm", "20:00"]),
    ("1 in the afternoon", &["1 pm", "13:00"]),
];
const PRICES: &[&str] = &["cheap", "moderate", "pricey"];

enum Piece {
    Text(String),
    Value(String, String),
}

fn t(s: &str) -> Piece {
    Piece::Text(s.to_string())
}

fn v(slot: &str, value: &str) -> Piece {
    Piece::Value(slot.to_string(), value.to_string())
}

fn render(pieces: &[Piece]) -> (String, Vec<SlotSpan>) {
    let mut text = String::new();
    let mut spans = Vec::new();
    for p in pieces {
        match p {
            Piece::Text(s) => text.push_str(s),
            Piece::Value(slot, value) => {
                let start = text.chars().count();
                text.push_str(value);
                spans.push(SlotSpan {
                    slot: slot.clone(),
                    start,
                    exclusive_end: start + value.chars().count(),
                });
            }
        }
    }
    (text, spans)
}

#[derive(Default)]
struct Update {
    intent: Option<&'static str>,
    requested: Vec<&'static str>,
    set: Vec<(&'static str, Vec<String>)>,
}

impl Update {
    fn intent(mut self, name: &'static str) -> Self {
        self.intent = Some(name);
        self
    }
    fn request(mut self, slot: &'static str) -> Self {
        self.requested.push(slot);
        self
    }
    fn set(mut self, slot: &'static str, value: &str) -> Self {
        self.set.push((slot, vec![value.to_string()]));
        self
    }
    fn set_variants(mut self, slot: &'static str, variants: Vec<String>) -> Self {
        self.set.push((slot, variants));
        self
    }
}

struct Script {
    rng: ChaCha8Rng,
    turns: Vec<Turn>,
    services: Vec<String>,
    states: BTreeMap<String, DialogueState>,
    variants: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl Script {
    fn new(seed: u64) -> Self {
        Script {
            rng: ChaCha8Rng::seed_from_u64(seed),
            turns: Vec::new(),
            services: Vec::new(),
            states: BTreeMap::new(),
            variants: BTreeMap::new(),
        }
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        items.choose(&mut self.rng).expect("non-empty pool")
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn visit(&mut self, service: &str) {
        if !self.services.iter().any(|s| s == service) {
            self.services.push(service.to_string());
        }
    }

    fn system(&mut self, service: &str, actions: Vec<Action>) {
        self.visit(service);
        let mut pieces = Vec::new();
        for a in &actions {
            if !pieces.is_empty() {
                pieces.push(t(" "));
            }
            let val = a.values.first().cloned().unwrap_or_default();
            let name = a.slot.replace('_', " ");
            match a.act.as_str() {
                "OFFER" => pieces.extend([t(&format!("The {name} is ")), v(&a.slot, &val), t(".")]),
                "INFORM" => pieces.extend([t(&format!("Its {name} is ")), v(&a.slot, &val), t(".")]),
                "CONFIRM" => pieces.extend([t(&format!("Please confirm the {name}: ")), v(&a.slot, &val), t(".")]),
                "REQUEST" => pieces.push(t(&format!("What {name} do you want?"))),
                "OFFER_INTENT" => pieces.push(t("Shall I book it?")),
                "NOTIFY_SUCCESS" => pieces.push(t("Your booking is done.")),
                "INFORM_COUNT" => pieces.push(t(&format!("I found {val} options."))),
                "REQ_MORE" => pieces.push(t("Anything else?")),
                "GOODBYE" => pieces.push(t("Have a great day.")),
                _ => pieces.push(t("Okay.")),
            }
        }
        let (utterance, slot_spans) = render(&pieces);
        self.turns.push(Turn {
            speaker: Speaker::System,
            utterance,
            frames: vec![Frame {
                service: service.to_string(),
                actions,
                state: None,
                value_variants: BTreeMap::new(),
                slot_spans,
            }],
        });
    }

    fn user(&mut self, service: &str, pieces: Vec<Piece>, actions: Vec<Action>, update: Update) {
        self.visit(service);
        let (utterance, slot_spans) = render(&pieces);
        let mut state = self.states.get(service).cloned().unwrap_or_else(DialogueState::empty);
        state.requested_slots.clear();
        if let Some(i) = update.intent {
            state.active_intent = i.to_string();
        }
        state
            .requested_slots
            .extend(update.requested.iter().map(|s| s.to_string()));
        let known = self.variants.entry(service.to_string()).or_default();
        for (slot, variants) in update.set {
            state.slot_values.insert(slot.to_string(), variants[0].clone());
            known.insert(slot.to_string(), variants);
        }
        let value_variants = state
            .slot_values
            .keys()
            .filter_map(|k| known.get(k).map(|v| (k.clone(), v.clone())))
            .collect();
        self.states.insert(service.to_string(), state.clone());
        self.turns.push(Turn {
            speaker: Speaker::User,
            utterance,
            frames: vec![Frame {
                service: service.to_string(),
                actions,
                state: Some(state),
                value_variants,
                slot_spans,
            }],
        });
    }

    fn value_of(&self, service: &str, slot: &str) -> Option<String> {
        self.states.get(service)?.slot_values.get(slot).cloned()
    }

    fn finish(self, dialogue_id: String) -> Dialogue {
        Dialogue {
            dialogue_id,
            services: self.services,
            turns: self.turns,
        }
    }
}

fn inform(slot: &str, value: &str) -> Action {
    Action::new("INFORM", slot, &[value])
}

fn inform_intent(name: &str) -> Action {
    Action::new("INFORM_INTENT", "intent", &[name])
}

fn address(s: &mut Script) -> String {
    let n = s.rng.random_range(10..990);
    format!("{n} {}", s.pick(STREETS))
}

fn phone(s: &mut Script) -> String {
    format!(
        "{}-555-{:04}",
        s.rng.random_range(200..990),
        s.rng.random_range(0..10000)
    )
}

fn homes(s: &mut Script) {
    let area = *s.pick(AREAS);
    let beds = *s.pick(&["1", "2", "3", "4"]);
    let mut pieces = vec![
        t("I'm looking for a "),
        t(beds),
        t(" bedroom apartment in "),
        v("area", area),
        t("."),
    ];
    let mut actions = vec![
        inform_intent("FindApartment"),
        inform("number_of_beds", beds),
        inform("area", area),
    ];
    let mut up = Update::default()
        .intent("FindApartment")
        .set("area", area)
        .set("number_of_beds", beds);
    if s.chance(0.3) {
        pieces.push(t(" It should allow pets."));
        actions.push(inform("pets_allowed", "True"));
        up = up.set("pets_allowed", "True");
    } else if s.chance(0.25) {
        pieces.push(t(" Furnished or not, I don't mind."));
        actions.push(inform("furnished", DONTCARE));
        up = up.set("furnished", DONTCARE);
    }
    s.user(HOMES, pieces, actions, up);

    let property = *s.pick(PROPERTIES);
    let rent = format!("${}", s.rng.random_range(15..45) * 100);
    s.system(
        HOMES,
        vec![
            Action::new("OFFER", "property_name", &[property]),
            Action::new("OFFER", "rent", &[&rent]),
        ],
    );
    if s.chance(0.4) {
        s.user(
            HOMES,
            vec![t("What's their phone number?")],
            vec![Action::new("REQUEST", "phone_number", &[])],
            Update::default().request("phone_number"),
        );
        let ph = phone(s);
        s.system(HOMES, vec![inform("phone_number", &ph)]);
    }
    let date = *s.pick(DATES);
    s.user(
        HOMES,
        vec![t("I'd like to visit it "), v("visit_date", date), t(".")],
        vec![inform_intent("ScheduleVisit"), inform("visit_date", date)],
        Update::default()
            .intent("ScheduleVisit")
            .set("property_name", property)
            .set("visit_date", date),
    );
    s.system(
        HOMES,
        vec![
            Action::new("CONFIRM", "property_name", &[property]),
            Action::new("CONFIRM", "visit_date", &[date]),
        ],
    );
    s.user(
        HOMES,
        vec![t("Yes, that works.")],
        vec![Action::new("AFFIRM", "", &[])],
        Update::default(),
    );
    s.system(
        HOMES,
        vec![Action::new("NOTIFY_SUCCESS", "", &[]), Action::new("REQ_MORE", "", &[])],
    );
}

/// `carried`: (city, date) known from an earlier service.
fn restaurants(s: &mut Script, carried: Option<(String, String)>) {
    let cuisine = *s.pick(CUISINES);
    let (pieces, mut actions, mut up);
    match &carried {
        Some((city, _)) => {
            pieces = vec![
                t("I'd also like to grab some "),
                v("cuisine", cuisine),
                t(" food there."),
            ];
            actions = vec![inform_intent("FindRestaurants"), inform("cuisine", cuisine)];
            up = Update::default()
                .intent("FindRestaurants")
                .set("cuisine", cuisine)
                .set("city", city);
        }
        None => {
            let city = *s.pick(AREAS);
            let mut p = vec![
                t("I want to find a "),
                v("cuisine", cuisine),
                t(" restaurant in "),
                v("city", city),
                t("."),
            ];
            actions = vec![
                inform_intent("FindRestaurants"),
                inform("cuisine", cuisine),
                inform("city", city),
            ];
            up = Update::default()
                .intent("FindRestaurants")
                .set("cuisine", cuisine)
                .set("city", city);
            if s.chance(0.35) {
                let price = *s.pick(PRICES);
                p.extend([t(" Something "), t(price), t(" please.")]);
                actions.push(inform("price_range", price));
                up = up.set("price_range", price);
            } else if s.chance(0.25) {
                p.push(t(" The price doesn't matter."));
                actions.push(inform("price_range", DONTCARE));
                up = up.set("price_range", DONTCARE);
            }
            pieces = p;
        }
    }
    s.user(RESTAURANTS, pieces, actions, up);

    let city = s.value_of(RESTAURANTS, "city").expect("city set");
    let mut name = *s.pick(RESTAURANT_NAMES);
    s.system(
        RESTAURANTS,
        vec![
            Action::new("OFFER", "restaurant_name", &[name]),
            Action::new("OFFER", "city", &[&city]),
        ],
    );
    if s.chance(0.3) {
        // Not involved: no state change.
        s.user(
            RESTAURANTS,
            vec![t("Can you find something else?")],
            vec![Action::new("REQUEST_ALTS", "", &[])],
            Update::default(),
        );
        let other = RESTAURANT_NAMES
            .iter()
            .copied()
            .filter(|n| *n != name)
            .collect::<Vec<_>>();
        name = *s.pick(&other);
        s.system(
            RESTAURANTS,
            vec![
                Action::new("OFFER", "restaurant_name", &[name]),
                Action::new("OFFER", "city", &[&city]),
            ],
        );
    }
    if s.chance(0.4) {
        if s.chance(0.5) {
            s.user(
                RESTAURANTS,
                vec![t("Do they serve vegetarian food?")],
                vec![Action::new("REQUEST", "has_vegetarian_options", &[])],
                Update::default().request("has_vegetarian_options"),
            );
            let veg = *s.pick(&BOOL);
            s.system(RESTAURANTS, vec![inform("has_vegetarian_options", veg)]);
        } else {
            s.user(
                RESTAURANTS,
                vec![t("What's their phone number?")],
                vec![Action::new("REQUEST", "phone_number", &[])],
                Update::default().request("phone_number"),
            );
            let ph = phone(s);
            s.system(RESTAURANTS, vec![inform("phone_number", &ph)]);
        }
    }

    let (time, alt) = *s.pick(TIMES);
    let time_variants: Vec<String> = std::iter::once(time)
        .chain(alt.iter().copied())
        .map(String::from)
        .collect();
    let seats = *s.pick(&["1", "2", "3", "4", "5", "6"]);
    let give_seats = s.chance(0.6);
    let mut pieces = vec![t("That sounds good. I'd like a table")];
    let mut actions = vec![inform_intent("ReserveRestaurant")];
    let mut up = Update::default()
        .intent("ReserveRestaurant")
        .set("restaurant_name", name)
        .set_variants("time", time_variants);
    if give_seats {
        pieces.extend([t(" for "), t(seats)]);
        actions.push(inform("number_of_seats", seats));
        up = up.set("number_of_seats", seats);
    }
    pieces.extend([t(" at "), v("time", time)]);
    actions.push(inform("time", time));
    match &carried {
        Some((_, date)) => up = up.set("date", date),
        None if s.chance(0.5) => {
            let date = *s.pick(DATES);
            pieces.extend([t(" "), v("date", date)]);
            actions.push(inform("date", date));
            up = up.set("date", date);
        }
        None => {}
    }
    pieces.push(t("."));
    s.user(RESTAURANTS, pieces, actions, up);

    if !give_seats {
        s.system(RESTAURANTS, vec![Action::new("REQUEST", "number_of_seats", &[])]);
        s.user(
            RESTAURANTS,
            vec![t(seats), t(" people, please.")],
            vec![inform("number_of_seats", seats)],
            Update::default().set("number_of_seats", seats),
        );
    }
    let booked_time = s.value_of(RESTAURANTS, "time").expect("time set");
    s.system(
        RESTAURANTS,
        vec![
            Action::new("CONFIRM", "restaurant_name", &[name]),
            Action::new("CONFIRM", "time", &[&booked_time]),
        ],
    );
    if s.chance(0.3) {
        let choices: Vec<_> = TIMES.iter().filter(|(t0, _)| *t0 != booked_time).collect();
        let (time2, alt2) = **s.pick(&choices);
        let vars: Vec<String> = std::iter::once(time2)
            .chain(alt2.iter().copied())
            .map(String::from)
            .collect();
        s.user(
            RESTAURANTS,
            vec![t("Actually, make it "), v("time", time2), t(".")],
            vec![inform("time", time2)],
            Update::default().set_variants("time", vars),
        );
        s.system(RESTAURANTS, vec![Action::new("CONFIRM", "time", &[time2])]);
    }
    s.user(
        RESTAURANTS,
        vec![t("Yes, please.")],
        vec![Action::new("AFFIRM", "", &[])],
        Update::default(),
    );
    s.system(RESTAURANTS, vec![Action::new("NOTIFY_SUCCESS", "", &[])]);
}

/// Asks for the address and closes the restaurant part so it becomes history.
fn restaurant_address(s: &mut Script) -> String {
    s.user(
        RESTAURANTS,
        vec![t("What's the address?")],
        vec![Action::new("REQUEST", "address", &[])],
        Update::default().request("address"),
    );
    let addr = address(s);
    s.system(RESTAURANTS, vec![inform("address", &addr)]);
    s.user(
        RESTAURANTS,
        vec![t("Thanks a lot.")],
        vec![Action::new("THANK_YOU", "", &[])],
        Update::default(),
    );
    s.system(RESTAURANTS, vec![Action::new("REQ_MORE", "", &[])]);
    addr
}

/// `destination` is only known from the system's earlier answer in another service.
fn rides(s: &mut Script, destination: &str) {
    let riders = *s.pick(&["1", "2", "3", "4"]);
    s.user(
        RIDES,
        vec![t("Can you get me a cab there for "), t(riders), t(" people?")],
        vec![inform_intent("GetRide"), inform("number_of_riders", riders)],
        Update::default()
            .intent("GetRide")
            .set("number_of_riders", riders)
            .set("destination", destination),
    );
    s.system(RIDES, vec![Action::new("REQUEST", "shared_ride", &[])]);
    let (pieces, value) = if s.chance(0.25) {
        (vec![t("Shared or not, I don't care.")], DONTCARE)
    } else if s.chance(0.5) {
        (vec![t("A shared ride is fine.")], "True")
    } else {
        (vec![t("I want a private ride.")], "False")
    };
    s.user(
        RIDES,
        pieces,
        vec![inform("shared_ride", value)],
        Update::default().set("shared_ride", value),
    );
    let fare = format!("${}", s.rng.random_range(8..60));
    s.system(
        RIDES,
        vec![
            Action::new("CONFIRM", "destination", &[destination]),
            Action::new("OFFER", "ride_fare", &[&fare]),
        ],
    );
    s.user(
        RIDES,
        vec![t("Yes, book it.")],
        vec![Action::new("AFFIRM", "", &[])],
        Update::default(),
    );
    s.system(RIDES, vec![Action::new("NOTIFY_SUCCESS", "", &[])]);
}

/// `city`: carried from the restaurant search.
fn hotels(s: &mut Script, city: &str) {
    let check_in = *s.pick(DATES);
    let others: Vec<&str> = DATES.iter().copied().filter(|d| *d != check_in).collect();
    let check_out = *s.pick(&others);
    let adults = *s.pick(&["1", "2", "3", "4"]);
    s.user(
        HOTELS,
        vec![
            t("I also need a house there for "),
            t(adults),
            t(" adults from "),
            v("check_in_date", check_in),
            t(" to "),
            v("check_out_date", check_out),
            t("."),
        ],
        vec![
            inform_intent("SearchHouse"),
            inform("number_of_adults", adults),
            inform("check_in_date", check_in),
            inform("check_out_date", check_out),
        ],
        Update::default()
            .intent("SearchHouse")
            .set("where_to", city)
            .set("number_of_adults", adults)
            .set("check_in_date", check_in)
            .set("check_out_date", check_out),
    );
    let addr = address(s);
    s.system(
        HOTELS,
        vec![
            Action::new("OFFER", "address", &[&addr]),
            Action::new("OFFER", "rating", &["4.3"]),
        ],
    );
    if s.chance(0.5) {
        s.user(
            HOTELS,
            vec![t("Does it have laundry service?")],
            vec![Action::new("REQUEST", "has_laundry_service", &[])],
            Update::default().request("has_laundry_service"),
        );
        s.system(HOTELS, vec![inform("has_laundry_service", "True")]);
    }
    s.user(
        HOTELS,
        vec![t("Great, please book it.")],
        vec![inform_intent("BookHouse")],
        Update::default().intent("BookHouse"),
    );
    s.system(HOTELS, vec![Action::new("NOTIFY_SUCCESS", "", &[])]);
}

fn closing(s: &mut Script) {
    let service = s.services.last().cloned().expect("at least one service");
    s.user(
        &service,
        vec![t("That's all, thanks.")],
        vec![Action::new("GOODBYE", "", &[])],
        Update::default(),
    );
    s.system(&service, vec![Action::new("GOODBYE", "", &[])]);
}

/// Dialogue shapes, by the services they visit in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Restaurants,
    HomesRestaurants,
    RestaurantsRide,
    HomesRestaurantsRide,
    RestaurantsHotel,
}

impl Flow {
    const SEEN: [Flow; 4] = [
        Flow::Restaurants,
        Flow::HomesRestaurants,
        Flow::RestaurantsRide,
        Flow::HomesRestaurantsRide,
    ];
}

pub fn generate_dialogue(dialogue_id: &str, flow: Flow, seed: u64) -> Dialogue {
    let mut s = Script::new(seed);
    match flow {
        Flow::Restaurants => restaurants(&mut s, None),
        Flow::HomesRestaurants | Flow::HomesRestaurantsRide => {
            homes(&mut s);
            let city = s.value_of(HOMES, "area").expect("area set");
            let date = s.value_of(HOMES, "visit_date").expect("visit date set");
            restaurants(&mut s, Some((city, date)));
        }
        Flow::RestaurantsRide | Flow::RestaurantsHotel => restaurants(&mut s, None),
    }
    match flow {
        Flow::RestaurantsRide | Flow::HomesRestaurantsRide => {
            let addr = restaurant_address(&mut s);
            rides(&mut s, &addr);
        }
        Flow::RestaurantsHotel => {
            let city = s.value_of(RESTAURANTS, "city").expect("city set");
            hotels(&mut s, &city);
        }
        _ => {}
    }
    closing(&mut s);
    s.finish(dialogue_id.to_string())
}

/// `count` dialogues; `unseen_every` > 0 makes every n-th one visit the
/// hotel service, which is absent from the train schema.
pub fn generate(prefix: &str, count: usize, seed: u64, unseen_every: usize) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let flow = if unseen_every > 0 && i % unseen_every == unseen_every - 1 {
                Flow::RestaurantsHotel
            } else {
                *Flow::SEEN.choose(&mut rng).expect("non-empty")
            };
            generate_dialogue(&format!("{prefix}_{i:05}"), flow, rng.random())
        })
        .collect()
}

/// The worked example: a home visit on a date, then a restaurant search in
/// the same area where the user accepts "World Gourmet" and books a table for
/// 4 at six in the evening, the date being carried over from the visit.
pub fn worked_dialogue() -> Dialogue {
    let mut s = Script::new(0);
    s.user(
        HOMES,
        vec![
            t("I'm looking for a 2 bedroom apartment in "),
            v("area", "Fremont"),
            t("."),
        ],
        vec![
            inform_intent("FindApartment"),
            inform("number_of_beds", "2"),
            inform("area", "Fremont"),
        ],
        Update::default()
            .intent("FindApartment")
            .set("area", "Fremont")
            .set("number_of_beds", "2"),
    );
    s.system(HOMES, vec![Action::new("OFFER", "property_name", &["Park Place"])]);
    s.user(
        HOMES,
        vec![t("I'd like to visit it on "), v("visit_date", "March 8th"), t(".")],
        vec![inform_intent("ScheduleVisit"), inform("visit_date", "March 8th")],
        Update::default()
            .intent("ScheduleVisit")
            .set("property_name", "Park Place")
            .set("visit_date", "March 8th"),
    );
    s.system(
        HOMES,
        vec![Action::new("NOTIFY_SUCCESS", "", &[]), Action::new("REQ_MORE", "", &[])],
    );
    s.user(
        RESTAURANTS,
        vec![
            t("I'd also like to grab some "),
            v("cuisine", "Indian"),
            t(" food in "),
            v("city", "Fremont"),
            t("."),
        ],
        vec![
            inform_intent("FindRestaurants"),
            inform("cuisine", "Indian"),
            inform("city", "Fremont"),
        ],
        Update::default()
            .intent("FindRestaurants")
            .set("cuisine", "Indian")
            .set("city", "Fremont"),
    );
    s.system(
        RESTAURANTS,
        vec![Action::new("OFFER", "restaurant_name", &["World Gourmet"])],
    );
    s.user(
        RESTAURANTS,
        vec![
            t("That sounds good. I'd like a table for 4 at "),
            v("time", "six in the evening"),
            t("."),
        ],
        vec![
            inform_intent("ReserveRestaurant"),
            inform("number_of_seats", "4"),
            inform("time", "six in the evening"),
        ],
        Update::default()
            .intent("ReserveRestaurant")
            .set("restaurant_name", "World Gourmet")
            .set_variants("time", vec!["six in the evening".into(), "6 pm".into()])
            .set("number_of_seats", "4")
            .set("date", "March 8th"),
    );
    s.system(RESTAURANTS, vec![Action::new("NOTIFY_SUCCESS", "", &[])]);
    s.finish("worked_00000".to_string())
}

/// Split sizes for [`write_corpus`].
#[derive(Debug, Clone, Copy)]
pub struct ToySizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for ToySizes {
    fn default() -> Self {
        ToySizes {
            train: 200,
            dev: 40,
            test: 40,
        }
    }
}

/// Writes `train/`, `dev/` and `test/` directories under `root`, each with a
/// `schema.json` and one `dialogues_001.json`.
pub fn write_corpus(root: impl AsRef<Path>, sizes: ToySizes, seed: u64) -> Result<()> {
    let root = root.as_ref();
    for (split, count, schema, unseen_every, salt) in [
        ("train", sizes.train, train_schema(), 0, 1u64),
        ("dev", sizes.dev, eval_schema(), 4, 2),
        ("test", sizes.test, eval_schema(), 4, 3),
    ] {
        let dir = root.join(split);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("schema.json"), schema.to_json_string()?)?;
        let prefix = format!("{salt}");
        let dialogues = generate(&prefix, count, seed.wrapping_mul(31).wrapping_add(salt), unseen_every);
        fs::write(dir.join("dialogues_001.json"), dialogues_to_json(&dialogues)?)?;
    }
    Ok(())
}
