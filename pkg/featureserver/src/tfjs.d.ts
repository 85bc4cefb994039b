// Optional backbone dependency, resolved at runtime only (the reference
// model must be servable without tfjs installed).
declare module "@tensorflow/tfjs";
